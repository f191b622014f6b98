//! Command-line workflows over the position-map toolkit.

pub mod args;
pub mod commands;
pub mod plot;

pub use args::Cli;
pub use commands::run;

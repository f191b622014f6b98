use std::process::ExitCode;

use clap::Parser;
use facemap_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

//! Reverse-mode autodiff on `f64` tensors and the position-map regression
//! network built on it.

pub mod checkpoint;
pub mod conv;
pub mod graph;
pub mod optim;
pub mod prn;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use conv::Conv2dSpec;
pub use graph::{Graph, Gradients, Var};
pub use optim::{Adam, LrSchedule};
pub use prn::{PrnArchitecture, PrnNet, DECODER_LAYERS};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainReport};

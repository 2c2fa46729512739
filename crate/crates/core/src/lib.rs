//! Structured pruning of feed-forward and convolutional networks by
//! importance sampling over data-informed sensitivities.

pub mod allocator;
pub mod data;
pub mod error;
pub mod format;
pub mod model;
pub mod pruner;
pub mod rng;
pub mod sensitivity;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use model::{Layer, NetworkModel};
pub use tensor::DenseTensor;

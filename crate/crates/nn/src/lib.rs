//! Reverse-mode autodiff on dense f64 tensors and the point-patch GPT
//! model built on it.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

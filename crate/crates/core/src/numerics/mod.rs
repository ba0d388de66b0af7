//! Dense `f64` tensors, a reverse-mode tape, and the layers built on it.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tensor;

pub use gradcheck::{finite_difference_check, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Linear, ParamSet};
pub use tensor::Tensor;

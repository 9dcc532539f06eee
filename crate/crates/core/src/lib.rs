//! Capacity-matched sparse neural networks and robustness probes.
//!
//! Networks are sparsified by widening or deepening an architecture while
//! holding the number of nonzero weights fixed, trained with masked SGD, and
//! then probed for robustness to weight and input perturbations.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod robustness;
pub mod seed;
pub mod sparsity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

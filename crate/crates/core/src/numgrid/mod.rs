//! Dense tensors, reverse-mode gradients, finite-difference checking and Adam.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod real;
pub mod resample;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, worst_error, FdOptions};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamTree;
pub use real::Real;
pub use tensor::Tensor;

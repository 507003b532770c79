//! Minimal differentiable numerics: tensors, a reverse-mode tape, the layer
//! set used by the networks, Adam, and finite-difference gradient checks.

mod adam;
pub mod gradcheck;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Activation, Gradients, Graph, ParamGrad, Var};
pub use params::{ParamId, ParamSet, ParamSnapshot};
pub use tensor::{dot, norm, softmax, softmax_rows, Tensor};

//! Dense reverse-mode differentiation: tensors, the op graph, special
//! functions, Adam and a finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod special;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

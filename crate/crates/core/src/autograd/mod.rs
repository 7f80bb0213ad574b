//! Reverse-mode differentiation over dense `f64` tensors.

pub mod gradcheck;
mod graph;
pub mod kernels;

pub use gradcheck::{check_gradients, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, NodeId, ParamGrads};

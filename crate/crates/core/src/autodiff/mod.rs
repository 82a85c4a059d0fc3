//! Reverse-mode automatic differentiation and gradient checking.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{grad_check, GradCheckReport, InputCheck};
pub use graph::{ElementwiseRule, Graph, LrnParams, Var};

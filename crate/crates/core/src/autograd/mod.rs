//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! The engine is define-by-run: build a fresh [`Graph`] for every forward
//! pass, call [`Graph::backward`] on a scalar, read gradients out of the
//! returned [`Gradients`]. Besides the textbook operations it carries a few
//! fused kernels the point-cloud networks need (column gather, grouped max,
//! grouped products, the orientation cube convolution and in-group KDE), each
//! with a hand-written backward that the finite-difference tests pin down.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{finite_difference_check, finite_difference_check_at};
pub use graph::{concat_rows, softmax_ce, BinaryKind, Gradients, Graph, Var, DIV_GUARD};
pub use optim::{Adam, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{Binder, Parameter, ParameterSet};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;

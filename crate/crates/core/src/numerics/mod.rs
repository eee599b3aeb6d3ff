//! Dense linear algebra, reverse-mode autodiff, and first-order optimization.

mod adam;
pub mod linalg;
mod matrix;
mod mlp;
mod tape;

pub use adam::{clip_global_norm, AdamState};
pub use matrix::Matrix;
pub use mlp::{Activation, Init, Mlp};
pub use tape::{log_sum_exp, pairwise_sq_dist, sigmoid, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: (usize, usize) },
    #[error("non-finite value at tape node {node}")]
    NonFinite { node: usize },
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,
    #[error("matrix is not square: {0:?}")]
    NotSquare((usize, usize)),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular")]
    Singular,
}

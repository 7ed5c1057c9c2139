//! Numerical substrate for the novel-object VQA lab.
//!
//! Everything here works on dense, row-major `f64` matrices. Column vectors
//! are `n × 1` matrices. The [`Tape`] records operations for reverse-mode
//! differentiation; [`grad_check`] compares its output with central
//! differences.

mod error;
mod gradcheck;
mod linalg;
mod matrix;
mod optim;
mod rng;
mod tape;

pub use error::{NumError, Result};
pub use gradcheck::{
    analytic_gradient, check_gradients, grad_check, grad_check_many, numeric_gradient, GradReport,
};
pub use linalg::{least_squares, ROBUST_RIDGE};
pub use matrix::{Matrix, MATRIX_MAGIC};
pub use optim::{clip_global_norm, Adam, AdamConfig, Sgd};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};

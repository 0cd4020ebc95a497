//! Sparse convex quadratic programming.
//!
//! [`QpProblem`] holds `min ½zᵀHz + fᵀz` subject to `A_eq z = b_eq`,
//! `A_in z ≤ b_in`. [`qp_solve`] runs an operator-splitting iteration with a
//! final active-set polish and reports KKT residuals alongside the solution.
//!
//! Problems can be written to a line-oriented text format with
//! [`QpProblem::write_dump`]: a `qp-dump v1` header, `dims n n_eq n_in`, then
//! sections `h`, `f`, `a_eq`, `b_eq`, `a_in`, `b_in`, each introduced by
//! `<tag> <count>` and followed by `row col value` triplets (matrices) or one
//! value per line (vectors).

pub mod admm;
pub mod kkt;
pub mod ldl;
pub mod problem;
pub mod sparse;

pub use admm::{kkt_residuals, qp_solve, QpSettings, QpSolution, QpStatus};
pub use kkt::{kkt_residuals_raw, KktReport};
pub use problem::QpProblem;
pub use sparse::{CsrMatrix, TripletBuilder};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem data contains non-finite values")]
    NonFinite,
    #[error("quadratic term is not symmetric")]
    NotSymmetric,
    #[error("quadratic term is not positive semidefinite (pivot {min_pivot:e})")]
    NotPsd { min_pivot: f64 },
    #[error("inequality multiplier {index} is negative ({value:e})")]
    NegativeMultiplier { index: usize, value: f64 },
    #[error("dump line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

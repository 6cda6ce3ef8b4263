//! Inexact Newton with backtracking, restarted right-preconditioned GMRES and
//! an overlapping-block (additive Schwarz) preconditioner.

mod gmres;
mod newton;
mod schwarz;
pub mod sparse;

use thiserror::Error;

pub use gmres::{gmres, GmresResult, KrylovConfig};
pub use newton::{
    newton, pseudo_transient, LineSearch, NewtonConfig, NewtonReport, NonlinearSystem, PtcConfig,
    StopReason,
};
pub use schwarz::{
    block_preconditioner, two_level_preconditioner, BlockDiagonal, SchwarzPreconditioner,
    TwoLevelSchwarz,
};
pub use sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("subdomain block {0} is singular")]
    SingularBlock(usize),
    #[error("coarse-grid operator is singular")]
    SingularCoarse,
    #[error("GMRES did not converge in {iterations} iterations (residual {residual:.3e})")]
    Krylov { iterations: usize, residual: f64 },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:.3e})")]
    Newton { iterations: usize, residual: f64 },
    #[error(
        "line search found no decrease at Newton iteration {iteration} (residual {residual:.3e})"
    )]
    LineSearch { iteration: usize, residual: f64 },
    #[error("non-finite residual at Newton iteration {0}")]
    NonFinite(usize),
}

/// A linear map `x ↦ y` on `R^dim`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityOperator(pub usize);

impl LinearOperator for IdentityOperator {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

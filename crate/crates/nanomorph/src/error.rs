//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameter or malformed configuration value.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Model parameters outside the feasible region (e.g. hard-core overflow).
    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    /// Input data insufficient for the requested estimate.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Iterative solver failed to reach tolerance.
    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    /// Malformed binary or CSV payload.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Levy measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("quadrature did not converge: estimated error {achieved:e} exceeds requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e}, tolerance {tolerance:e})")]
    NotConverged { iterations: usize, residual: f64, tolerance: f64 },

    #[error("explicit step violates stability bound: {0}")]
    Stability(String),

    #[error("disconnected kernel: {0}")]
    DisconnectedKernel(String),

    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised across the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("right-hand side is not mean-free (mean {mean:e}, tolerance {tolerance:e})")]
    Solvability { mean: f64, tolerance: f64 },

    #[error("elliptic solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numerical failure at step {step} (t = {t}): {message}")]
    Numerical { step: u64, t: f64, message: String },

    #[error("noise construction error: {0}")]
    Noise(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

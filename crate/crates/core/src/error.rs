use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("particle {index} at {coord} is more than one period outside [{lo}, {hi}]; time step too large")]
    StepSize {
        index: usize,
        coord: f64,
        lo: f64,
        hi: f64,
    },

    #[error("position ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },

    #[error("stochastic rounding requires a nonnegative finite input, got {0}")]
    NegativeRounding(f64),

    #[error("poisson problem is singular and the right-hand side has nonzero mean {mean:e}")]
    Compatibility { mean: f64 },

    #[error("poisson residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("non-finite value detected at step {step} in {what}")]
    NonFinite { step: usize, what: &'static str },

    #[error("size mismatch: {0}")]
    Mismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

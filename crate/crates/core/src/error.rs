use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("eigen-solver failed on a {dim}x{dim} matrix (max |entry| = {max_abs:e})")]
    NumericalFailure { dim: usize, max_abs: f64 },

    #[error("(E - H) is singular at E = {energy} MHz")]
    Singular { energy: f64 },

    #[error("only {found} band modes available, need at least 4")]
    InsufficientModes { found: usize },

    #[error("no band gap: widest central interval {width:.3} MHz is within the level-spacing scale {spacing:.3} MHz")]
    DegenerateGap { width: f64, spacing: f64 },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("root not bracketed: {0}")]
    NotBracketed(String),

    #[error("integration step floored at {step:e} ns without reaching tolerance")]
    StepFloor { step: f64 },

    #[error("under-determined fit: {observations} observations for {free} free parameters")]
    Underdetermined { observations: usize, free: usize },

    #[error("bootstrap aborted: {failed} of {total} resamples failed")]
    BootstrapFailed { failed: usize, total: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid Hilbert space: {0}")]
    InvalidSpace(String),

    #[error("{what} dimension {dim} exceeds the configured cap {cap}")]
    DimensionCap { what: &'static str, dim: usize, cap: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("state norm underflow at t = {time} us")]
    NormUnderflow { time: f64 },

    #[error("truncation breach: population {population:.3e} in the top Fock band at t = {time} us exceeds {threshold:.1e}")]
    TruncationBreach { time: f64, population: f64, threshold: f64 },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error("i/o: {0}")]
    Io(String),
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    InvalidConfig,
    Truncation,
    NonConvergence,
    Other,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidSpace(_)
            | Error::InvalidParams(_)
            | Error::InvalidInput(_)
            | Error::UnknownPreset(_)
            | Error::DimensionCap { .. }
            | Error::DimensionMismatch { .. }
            | Error::IndexOutOfRange(_) => ErrorCategory::InvalidConfig,
            Error::TruncationBreach { .. } => ErrorCategory::Truncation,
            Error::NonConvergence(_) | Error::Integration(_) | Error::NormUnderflow { .. } => {
                ErrorCategory::NonConvergence
            }
            Error::Empty(_) | Error::Io(_) => ErrorCategory::Other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

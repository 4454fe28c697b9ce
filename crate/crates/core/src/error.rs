use thiserror::Error;

use crate::evolve::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid cavity cutoff {0}: at least 2 Fock levels are required")]
    InvalidCutoff(usize),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("operation requires the {expected} qubit representation")]
    WrongRepresentation { expected: &'static str },

    #[error("index {index} out of range (valid: {range})")]
    IndexOutOfRange { index: usize, range: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("state vector norm deviates from 1 by {0:e}")]
    NotNormalized(f64),

    #[error("not a physical density matrix: {0}")]
    NotPhysical(String),

    #[error("operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),

    #[error(
        "cavity cutoff {cutoff} too small: truncated population {tail:e} exceeds {bound:e}"
    )]
    Truncation { cutoff: usize, tail: f64, bound: f64 },

    #[error("expectation value has imaginary residue {0:e}")]
    ImaginaryResidue(f64),

    #[error("ergotropy {0:e} below the admissible lower bound")]
    NegativeErgotropy(f64),

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("step failure at t = {t:e}: {reason}")]
    StepFailure { t: f64, reason: String },

    #[error("physicality violated at t = {t:e} (in units of pi/Omega_R): {reason}")]
    Physicality {
        t: f64,
        reason: String,
        partial: Box<Trajectory>,
    },

    #[error("dimension {dim} exceeds the superoperator guard of {limit}")]
    DimensionGuard { dim: usize, limit: usize },

    #[error("no first maximum of the holder energy inside the time window")]
    NoMaximum,
}

impl Error {
    /// Short stable tag used in CSV status columns.
    pub fn cause(&self) -> &'static str {
        match self {
            Error::InvalidCutoff(_)
            | Error::InvalidBasis(_)
            | Error::WrongRepresentation { .. }
            | Error::IndexOutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::NotSquare { .. }
            | Error::InvalidParams(_)
            | Error::InvalidGrid(_) => "invalid_input",
            Error::NotNormalized(_) | Error::NotPhysical(_) | Error::NotHermitian(_) => {
                "not_physical"
            }
            Error::Truncation { .. } => "truncation",
            Error::ImaginaryResidue(_) => "imaginary_residue",
            Error::NegativeErgotropy(_) => "negative_ergotropy",
            Error::StepFailure { .. } => "step_failure",
            Error::Physicality { .. } => "physicality",
            Error::DimensionGuard { .. } => "dimension_guard",
            Error::NoMaximum => "no_maximum",
        }
    }
}

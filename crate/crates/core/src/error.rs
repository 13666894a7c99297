use thiserror::Error;

use crate::innovations::InnovationsResult;
use crate::linalg::Matrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    NotSymmetric { asymmetry: f64, tolerance: f64 },

    #[error("matrix contains NaN or infinite entries")]
    NotFinite,

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("matrix is singular or too ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("factor VAR is not stationary (companion spectral radius {radius})")]
    NotStationary { radius: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Some prediction error covariance lost positive definiteness.
    #[error("innovation covariance at step {step} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    SingularInnovationCovariance { step: usize, min_eigenvalue: f64 },

    #[error("innovations recursion did not converge after {iterations} steps (last relative update {final_update:e})")]
    NoConvergence {
        iterations: usize,
        final_update: f64,
        partial: Box<InnovationsResult>,
    },

    #[error("matrix equation has no positive definite solution: {reason}")]
    NotSolvable {
        reason: String,
        iterations: usize,
        last_iterate: Option<Box<Matrix>>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NotSymmetric { .. } => "NotSymmetric",
            Error::NotFinite => "NotFinite",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::Singular { .. } => "Singular",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::NotStationary { .. } => "NotStationary",
            Error::InvalidModel(_) => "InvalidModel",
            Error::InvalidInput(_) => "InvalidInput",
            Error::SingularInnovationCovariance { .. } => "SingularInnovationCovariance",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NotSolvable { .. } => "NotSolvable",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

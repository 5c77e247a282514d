use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid model:\n{0}")]
    InvalidModel(ValidationReport),

    #[error("invalid {what}: {reason}")]
    InvalidInput { what: &'static str, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("linear system (I - gamma P) is singular; input is corrupted")]
    Singular,

    #[error("bregman reference point has zero mass at ({action}, {state}) where the target is positive")]
    SupportMismatch { action: usize, state: usize },

    #[error("feature matrix is rank deficient (smallest eigenvalue {min_eigenvalue:e})")]
    RankDeficient { min_eigenvalue: f64 },

    #[error("unsupported ambiguity set: {0}")]
    Unsupported(String),

    #[error("evaluator failed at iteration {iteration}: {source}")]
    Evaluator {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn input(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            what,
            reason: reason.into(),
        }
    }

    /// True when the failure is a validation failure of user input rather than
    /// a runtime fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidModel(_)
                | Error::InvalidInput { .. }
                | Error::InvalidParameter { .. }
                | Error::RankDeficient { .. }
                | Error::Parse { .. }
                | Error::Config(_)
        )
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}

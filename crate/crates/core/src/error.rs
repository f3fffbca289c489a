use thiserror::Error;

#[derive(Debug, Error)]
pub enum DfrcError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("numerical failure in {context}: {reason}")]
    Numerical { context: &'static str, reason: String },

    #[error("PAPR is undefined for an all-zero sequence")]
    ZeroSequence,

    #[error(
        "MUI budget {budget:e} is unattainable: the smallest MUI energy reachable within the \
         energy budget is {min_mui:e}"
    )]
    Infeasible { budget: f64, min_mui: f64 },

    #[error("rank-one extraction failed: {0}")]
    RankOne(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0} is not supported")]
    Unsupported(&'static str),
}

pub type Result<T> = std::result::Result<T, DfrcError>;

impl DfrcError {
    pub(crate) fn numerical(context: &'static str, reason: impl Into<String>) -> Self {
        DfrcError::Numerical {
            context,
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        DfrcError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        DfrcError::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

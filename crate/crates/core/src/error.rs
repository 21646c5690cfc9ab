use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input value lies outside the domain of the function (e.g. a non-finite logit).
    #[error("domain error: {0}")]
    Domain(String),

    /// A hyper-parameter or argument violates its documented range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Shapes or sizes of the arguments do not agree.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed serialized input.
    #[error("parse error at line {line}, field {field}: {reason}")]
    Parse {
        line: usize,
        field: usize,
        reason: String,
    },

    /// Training produced a NaN or infinity.
    #[error("non-finite value at iteration {iteration}, category {category}: {what}")]
    NonFinite {
        iteration: usize,
        category: usize,
        what: String,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(line: usize, field: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field,
            reason: reason.into(),
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed document: JSON syntax, missing or unknown keys, wrong types.
    #[error("parse error: {0}")]
    Parse(String),

    /// Well-formed input that violates a structural rule.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("layer {layer} is not a convolution; {what} needs a convolutional layer")]
    NotConv { layer: usize, what: &'static str },

    #[error("divisibility violated: {0}")]
    Divisibility(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no feasible configuration: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }
}

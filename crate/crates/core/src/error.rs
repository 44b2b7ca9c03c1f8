use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An input lies outside the domain of the operation (log of a non-positive value, ...).
    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },

    /// A precondition of an API call was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An operation produced NaN or an infinity.
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },
}

impl Error {
    pub(crate) fn dim(op: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op: op.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Operand shapes do not conform for a primitive.
    #[error("dimension error in {op}: shapes {shapes:?}")]
    Dimension {
        op: &'static str,
        shapes: Vec<(usize, usize)>,
    },
    #[error("index error in {op}: index {index} out of range 0..{bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numerical failure at parameter `{param}`: {detail}")]
    Numerical { param: String, detail: String },
    #[error("malformed record: field `{field}`: {reason}")]
    MalformedRecord { field: &'static str, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, shapes: &[(usize, usize)]) -> Self {
        Error::Dimension {
            op,
            shapes: shapes.to_vec(),
        }
    }

    pub fn malformed(field: &'static str, reason: impl Into<String>) -> Self {
        Error::MalformedRecord {
            field,
            reason: reason.into(),
        }
    }
}

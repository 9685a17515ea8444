use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("invalid shape in {op}: {reason}")]
    InvalidShape { op: &'static str, reason: String },
    #[error("index {index} out of range (bound {bound})")]
    Index { index: usize, bound: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numerical error: {0}")]
    Numerics(String),
    #[error("unsupported op `{0}`")]
    UnsupportedOp(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &Shape, right: &Shape) -> Self {
        Error::Shape {
            op,
            left: left.clone(),
            right: right.clone(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            reason: reason.into(),
        }
    }
}

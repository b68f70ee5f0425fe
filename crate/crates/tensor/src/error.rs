use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape error in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("numeric fault: {op} produced a non-finite value")]
    NumericFault { op: &'static str },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate batch in {op}: train mode needs at least 2 samples, got {size}")]
    DegenerateBatch { op: &'static str, size: usize },
    #[error("usage error: {0}")]
    Usage(String),
}

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, actual: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        expected: expected.into(),
        actual: format!("{actual:?}"),
    }
}

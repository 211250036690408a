use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    /// Operand shapes are incompatible with the primitive.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// A primitive produced NaN or infinity.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    /// The caller violated an API precondition.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(AutodiffError::Shape {
        op,
        detail: detail.into(),
    })
}

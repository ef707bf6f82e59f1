use thiserror::Error;

/// Errors raised by estimators, optimizers and simulators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum FsmError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "singular system matrix (condition estimate {condition:.3e}); use a positive ridge penalty"
    )]
    Singular { condition: f64 },

    #[error("operation not supported by model `{model}`: {operation}")]
    Unsupported {
        model: &'static str,
        operation: &'static str,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no usable result: {0}")]
    NoResult(String),
}

pub type Result<T> = std::result::Result<T, FsmError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(FsmError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite<'a>(
    context: &'static str,
    values: impl IntoIterator<Item = &'a f64>,
) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FsmError::NonFinite(context))
    }
}

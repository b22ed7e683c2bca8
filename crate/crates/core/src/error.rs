use alloc::string::String;

/// Errors produced by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument or input violates an operation's precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// Tensor or array shapes do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail_validation {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Validation(alloc::format!($($arg)*)))
    };
}

macro_rules! bail_shape {
    ($($arg:tt)*) => {
        return Err($crate::error::Error::Shape(alloc::format!($($arg)*)))
    };
}

pub(crate) use bail_shape;
pub(crate) use bail_validation;

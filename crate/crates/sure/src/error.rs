//! Crate-wide error type and CLI exit-code categories.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SureError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at line {line}: {msg}")]
    DataAtLine { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
}

impl From<std::io::Error> for SureError {
    fn from(e: std::io::Error) -> Self {
        SureError::Io(e.to_string())
    }
}

impl SureError {
    /// Exit-code category for the CLI: 2 config, 3 data, 4 shape/contract, 5 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            SureError::Config(_) => 2,
            SureError::Data(_) | SureError::DataAtLine { .. } | SureError::Io(_) => 3,
            SureError::ShapeMismatch { .. } | SureError::InvalidArgument(_) => 4,
            SureError::NonFinite(_) | SureError::Diverged { .. } => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, SureError>;

//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Image or tensor dimensions violate a contract (non-multiple-of-8,
    /// mismatched shapes, too small for the requested operation).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A numeric or structural parameter is outside its allowed range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A watermark pattern violates one of its invariants.
    #[error("watermark pattern error: {0}")]
    Pattern(String),

    /// A network spec is internally inconsistent (channel chaining, skips).
    #[error("network spec error: {0}")]
    Spec(String),

    /// Forward/backward called with shapes that do not match the spec.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite gradients or moments reached the optimizer.
    #[error("optimizer error: {0}")]
    Optimizer(String),

    /// A training loop produced a non-finite loss.
    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    /// A requested oracle scenario is incompatible with the bundle, or an
    /// attack was pointed at an oracle outside its threat model.
    #[error("scenario violation: {0}")]
    Scenario(String),

    /// A query entry point is not available under the oracle's scenario.
    #[error("access denied: {0}")]
    AccessDenied(String),

    /// Normalized correlation is undefined for a zero-norm operand.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// An operation that requires at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Checkpoint or bundle file is unreadable, corrupt, or wrong version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Configuration file problem, with a line number when known.
    #[error("config error{}: {message}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// PNG decode/encode failure or unsupported pixel format.
    #[error("image file error: {0}")]
    ImageFile(String),
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config { line: None, message: message.into() }
    }

    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        Error::Config { line: Some(line), message: message.into() }
    }

    /// Process exit code for the CLI: 2 config, 3 divergence, 4 scenario.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config { .. } | Error::InvalidParameter(_) => 2,
            Error::TrainingDiverged(_) | Error::Optimizer(_) => 3,
            Error::Scenario(_) | Error::AccessDenied(_) => 4,
            _ => 1,
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("preset not found: {0}")]
    PresetNotFound(String),
    #[error("invalid preset parameter: {0}")]
    InvalidPreset(String),
    #[error("audit unavailable: {0}")]
    AuditUnavailable(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("expression error at column {column}: {message}")]
    Expr { column: usize, message: String },
    #[error("PDE solve failed: {0}")]
    Pde(String),
    #[error("transform rejected: {0}")]
    Transform(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

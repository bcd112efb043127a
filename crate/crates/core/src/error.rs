use std::path::PathBuf;

/// Coarse classification used by the command line to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Runtime,
    Transport,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("format: {0}")]
    Format(String),
    #[error("length: {0}")]
    Length(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("parse: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Config(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("summary policy: {0}")]
    Policy(String),
    #[error("mask: {0}")]
    Mask(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("transport{}: {detail}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, detail: String },
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Training { step: usize, loss: f64 },
    #[error("internal: {0}")]
    Internal(String),
    #[error("io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Transport { .. } => ErrorCategory::Transport,
            Error::Numeric(_) | Error::Training { .. } | Error::Internal(_) | Error::Io { .. } => {
                ErrorCategory::Runtime
            }
            _ => ErrorCategory::Validation,
        }
    }

    /// Short machine-friendly label, e.g. `"format"` or `"transport"`.
    pub fn label(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid-shape",
            Error::Capacity(_) => "capacity",
            Error::Format(_) => "format",
            Error::Length(_) => "length",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::Parse(_) => "parse",
            Error::Config(_) => "config",
            Error::Validation(_) => "validation",
            Error::Shape(_) => "shape",
            Error::Policy(_) => "policy",
            Error::Mask(_) => "mask",
            Error::Layout(_) => "layout",
            Error::Schedule(_) => "schedule",
            Error::Transport { .. } => "transport",
            Error::Numeric(_) => "numeric",
            Error::Training { .. } => "training",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

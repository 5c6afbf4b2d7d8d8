use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("code index {index} out of range for codebook of size {size}")]
    CodeOutOfRange { index: usize, size: usize },

    #[error("k-means init batch has {rows} rows but the codebook needs {needed}; enlarge the init batch")]
    InitBatchTooSmall { rows: usize, needed: usize },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("missing stem `{name}` at {}", path.display())]
    MissingStem { name: String, path: PathBuf },

    #[error("wav format error: {0}")]
    Wav(String),

    #[error("code grid format error: {0}")]
    GridFormat(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint config mismatch in field `{field}`: checkpoint has {found}, expected {expected}")]
    ConfigMismatch {
        field: String,
        found: String,
        expected: String,
    },

    #[error("training diverged at step {step}: total loss is {value}")]
    Diverged { step: u64, value: f64 },

    #[error("io error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable class used by the CLI's error line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::TooShort { .. } => "too_short",
            Error::Shape(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::CodeOutOfRange { .. } => "code_out_of_range",
            Error::InitBatchTooSmall { .. } => "init_batch_too_small",
            Error::Config { .. } => "config",
            Error::MissingStem { .. } => "missing_stem",
            Error::Wav(_) => "wav_format",
            Error::GridFormat(_) => "grid_format",
            Error::Checkpoint(_) => "checkpoint",
            Error::ConfigMismatch { .. } => "config_mismatch",
            Error::Diverged { .. } => "diverged",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

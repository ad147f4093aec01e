use std::path::PathBuf;

use ghr_tensor::TensorError;

pub type Result<T> = std::result::Result<T, GhrError>;

#[derive(Debug, thiserror::Error)]
pub enum GhrError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("climatology is missing days of year {0:?}")]
    MissingDays(Vec<u16>),

    #[error("station csv line {line}: {reason}")]
    Station { line: u64, reason: String },

    #[error("non-finite value in {stage} at step {step}: {detail}")]
    NonFinite {
        stage: &'static str,
        step: usize,
        detail: String,
    },

    #[error("gradient reached frozen parameter {0}")]
    FrozenGradient(String),

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("missing artifact from stage `{stage}`: {path} (run `ghr {stage}` first)")]
    MissingArtifact { stage: &'static str, path: PathBuf },
}

impl GhrError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::Invalid(msg.into())
    }
}

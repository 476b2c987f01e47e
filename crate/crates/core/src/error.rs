use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PifmError>;

#[derive(Debug, Error)]
pub enum PifmError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<PifmError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PifmError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        PifmError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        PifmError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: qmt::error::Error },

    #[error("artifacts missing in {0} (run `qmt synth` first)")]
    ArtifactsMissing(PathBuf),

    #[error("certificate has {0} violations")]
    Uncertified(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Tags a core error with the pipeline stage that produced it.
pub(crate) fn at(stage: &'static str) -> impl Fn(qmt::error::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no tokens")]
    EmptyInput,

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown intent `{0}`")]
    UnknownIntent(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value encountered during {0}")]
    NonFinite(&'static str),

    #[error("language-model backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("only {available} admissible candidates, {requested} requested")]
    VocabularyExhausted { requested: usize, available: usize },

    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),

    #[error("inverse-Hessian recursion diverged at step {step} (norm {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("metric needs at least one IND and one OOD score")]
    InsufficientData,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage, source: Box::new(e) },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

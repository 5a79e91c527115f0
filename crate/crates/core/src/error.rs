use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("teacher request failed: {0}")]
    Network(String),

    #[error("teacher response has no per-token logprobs")]
    MissingLogprobs,

    #[error(
        "token alignment failed: returned tokens {got:?} do not reconstruct answer {answer:?}"
    )]
    TokenAlignment { answer: String, got: String },

    #[error("triplet {id}: {source}")]
    Triplet {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("confidence scale mismatch: with-doc {with:?}, without-doc {without:?}")]
    ScaleMismatch { with: String, without: String },

    #[error(
        "cannot balance dataset: {positives} positives, {negatives} negatives, {neutral} neutral"
    )]
    Unbalanceable {
        positives: usize,
        negatives: usize,
        neutral: usize,
    },

    #[error("feature schema mismatch: expected {expected}, got {got}")]
    SchemaMismatch { expected: String, got: String },

    #[error("non-finite gradient at parameter {index}")]
    NonFiniteGradient { index: usize },

    #[error("training diverged at epoch {epoch}: total loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("no evaluable pairs")]
    NoEvaluablePairs,

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    /// Short machine-readable category used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::InvalidRecord { .. } => "invalid_record",
            Error::Network(_) => "network",
            Error::MissingLogprobs => "missing_logprobs",
            Error::TokenAlignment { .. } => "token_alignment",
            Error::Triplet { source, .. } => source.kind(),
            Error::ScaleMismatch { .. } => "scale_mismatch",
            Error::Unbalanceable { .. } => "unbalanceable_dataset",
            Error::SchemaMismatch { .. } => "schema_mismatch",
            Error::NonFiniteGradient { .. } => "numerical",
            Error::Diverged { .. } => "diverged",
            Error::NoEvaluablePairs => "no_evaluable_pairs",
            Error::Config { .. } => "config",
            Error::Model(_) => "model",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

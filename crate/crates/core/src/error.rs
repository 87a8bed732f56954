use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("synthesis failed: {0}")]
    Synthesis(String),
    #[error("degenerate source: {0}")]
    DegenerateSource(String),
    #[error("degenerate reference: {0}")]
    DegenerateReference(String),
    #[error("silent reference: {0}")]
    SilentReference(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing assets: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingAsset(Vec<PathBuf>),
    #[error("duplicate clip id {0:?}")]
    DuplicateId(String),
    #[error("sampling exhausted after {attempts} attempts: {reason}")]
    SamplingExhausted { attempts: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error in {term}: value {value}")]
    Numerical { term: String, value: f64 },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("clip of {samples} samples is shorter than one window of {window}")]
    ClipTooShort { samples: usize, window: usize },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

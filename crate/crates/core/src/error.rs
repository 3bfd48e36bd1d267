use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("unknown chain name `{0}`")]
    UnknownChain(String),
    #[error("unknown parameter field `{0}`")]
    UnknownField(String),
    #[error("unknown chain combination `{0}`")]
    UnknownCombo(String),
    #[error("no free parameters selected")]
    EmptyMask,
    #[error("parameter layouts differ between repetitions")]
    MaskMismatch,
    #[error("sample {pose} has no observation for {what}")]
    MissingObservation { pose: usize, what: String },
    #[error("solver: {0}")]
    Solve(String),
    #[error("dataset generation failed in stage `{stage}` after {attempts} attempts (target index {index})")]
    Generation {
        stage: &'static str,
        index: usize,
        attempts: usize,
    },
    #[error("need {requested} samples but dataset has {available}")]
    InsufficientSamples { requested: usize, available: usize },
    #[error("dataset already carries measurement noise; apply noise to a clean dataset")]
    AlreadyNoisy,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported file version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

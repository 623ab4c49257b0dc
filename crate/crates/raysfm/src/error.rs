use std::path::PathBuf;

use raysfm_core::denoiser::ModelError;
use raysfm_core::diffusion::DiffusionError;
use raysfm_core::eval::EvalError;
use raysfm_core::geometry::GeometryError;
use raysfm_core::synthdata::SynthError;
use thiserror::Error;

/// Failure of a command, grouped by process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Numeric(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => Error::Config(e.to_string()),
            ModelError::InvalidInput(_) => Error::Data(e.to_string()),
            ModelError::NonFinite(_) => Error::Numeric(e.to_string()),
        }
    }
}

impl From<DiffusionError> for Error {
    fn from(e: DiffusionError) -> Self {
        match e {
            DiffusionError::Model(m) => m.into(),
            DiffusionError::InvalidInput(_) => Error::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for Error {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidInput(_) => Error::Config(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<GeometryError> for Error {
    fn from(e: GeometryError) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Degenerate(_) => Error::Numeric(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Data(format!("malformed JSON: {e}"))
    }
}

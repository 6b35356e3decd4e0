use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera metadata: {0}")]
    InvalidMetadata(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("color space mismatch: expected {expected:?}, found {found:?}")]
    ColorSpace {
        expected: crate::image::ColorSpace,
        found: crate::image::ColorSpace,
    },

    #[error("singular matrix: {0}")]
    SingularMatrix(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown shutter time {0}")]
    UnknownShutter(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("radial distortion inversion did not converge at pixel ({u}, {v})")]
    DistortionDiverged { u: f64, v: f64 },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

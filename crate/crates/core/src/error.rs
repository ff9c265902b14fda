use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("empty foreground: no masked pixel carries a valid depth")]
    EmptyForeground,

    #[error("negative depth {depth} under mask at pixel ({u}, {v})")]
    NegativeDepth { u: usize, v: usize, depth: f32 },

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("mesh orientation error: {0}")]
    Orientation(String),

    #[error("requested {requested} points from a cloud of {available}")]
    NotEnoughPoints { requested: usize, available: usize },

    #[error("render produced no foreground pixel (mesh behind or outside the camera)")]
    EmptyRender,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGrad(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("unknown {what} `{name}`; valid: {valid}")]
    Unknown {
        what: &'static str,
        name: String,
        valid: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }
}

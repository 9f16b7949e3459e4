use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TandemError>;

#[derive(Debug, Error)]
pub enum TandemError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TandemError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TandemError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by NaN/Inf values rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, TandemError::Numeric(_))
    }
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(TandemError::Shape(msg.into()))
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(TandemError::Numeric(format!(
            "{what}: non-finite value {} at index {i}",
            values[i]
        ))),
    }
}

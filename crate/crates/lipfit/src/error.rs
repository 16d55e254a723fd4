use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid parameter vectors, dimension mismatches, out-of-range values.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A feature vector was degenerate (e.g. zero norm) where a direction
    /// was required.
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    /// Dataset or asset content problems (missing frames, bad counts, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Structured-file parse failure with location.
    #[error("parse error in {path}{}: {msg}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        msg: String,
    },

    /// Run configuration problems (unknown keys, bad values, bad flags).
    #[error("config error: {0}")]
    Config(String),

    /// Non-finite or diverging numerics; carries the component that failed.
    #[error("numerical failure in {component}: {msg}")]
    Numerical { component: String, msg: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(path: impl Into<PathBuf>, line: impl Into<Option<usize>>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line: line.into(),
            msg: msg.into(),
        }
    }

    pub fn numerical(component: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Numerical {
            component: component.into(),
            msg: msg.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The orientation error is undefined when the horizontal distance error vanishes.
    #[error("singular error transform: horizontal distance error e_d = {ed:e}")]
    SingularTransform { ed: f64 },

    #[error("error state leaves the feasible error set: e_d = {ed} < {bound}")]
    OutsideErrorSet { ed: f64, bound: f64 },

    #[error("non-finite {0}")]
    NonFinite(&'static str),

    #[error("sway speed {speed} exceeds its bound {bound}")]
    SwayBound { speed: f64, bound: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("tightened set is empty: {0}")]
    EmptyTightenedSet(String),

    #[error("tube certification failed: {0}")]
    Certification(String),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

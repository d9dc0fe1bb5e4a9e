use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: cannot parse {text:?} as a number")]
    Parse { line: usize, text: String },

    #[error("line {line}: value {text:?} is not finite")]
    NonFiniteValue { line: usize, text: String },

    #[error("series has {0} observations, need at least 2")]
    TooShort(usize),

    #[error("invalid grid {spec:?}: {reason}")]
    Grid { spec: String, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error(transparent)]
    Model(#[from] diffkalman_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

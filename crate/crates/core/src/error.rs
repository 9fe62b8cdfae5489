use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    Size(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("ill-posed system: {0}")]
    IllPosed(String),

    #[error("denoiser domain mismatch: handle operates on {handle}, input is {input}")]
    Domain {
        handle: &'static str,
        input: &'static str,
    },

    #[error(transparent)]
    Archive(#[from] ArchiveError),

    #[error("iteration {index}: {source}")]
    Iteration {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub(crate) fn at_iteration(self, index: usize) -> Self {
        Error::Iteration {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a weight archive or fixture file.
#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("bad magic bytes (expected {expected:?})")]
    BadMagic { expected: &'static str },

    #[error("file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("unsupported layer `{name}`: {reason}")]
    UnsupportedLayer { name: String, reason: String },
}

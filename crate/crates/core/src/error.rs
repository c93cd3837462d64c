use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    /// Malformed file contents (bad magic, unparsable manifest line, ...).
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter `{name}`: {detail}")]
    Param { name: &'static str, detail: String },

    /// Dataset-level problems: empty sets, missing clips, degenerate sources.
    #[error("data error: {0}")]
    Data(String),

    #[error("LCA state became non-finite at step {step}; dt_over_tau is likely too large")]
    Diverged { step: usize },

    /// API sequencing violations (untrained readouts, double denoise, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn wav(path: impl Into<PathBuf>, source: hound::Error) -> Self {
        Error::Wav {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn shape(
        context: &'static str,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn param(name: &'static str, detail: impl Into<String>) -> Self {
        Error::Param {
            name,
            detail: detail.into(),
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed a value outside an operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration field failed validation.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// On-disk data did not match its declared layout.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A named split, subject, node or label does not exist.
    #[error("lookup failed: {0}")]
    Lookup(String),

    /// A math domain violation (e.g. two taxonomy nodes share no root).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot score image: truth label `{label}` is not in the taxonomy")]
    UnresolvedLabel { label: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn format(path: impl std::fmt::Display, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, arguments, names,
    /// malformed files) rather than by the environment or by a diverging
    /// computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Argument(_)
                | Error::Config { .. }
                | Error::Lookup(_)
                | Error::Json { .. }
                | Error::Format { .. }
                | Error::UnresolvedLabel { .. }
        )
    }
}

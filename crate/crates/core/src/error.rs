//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("registry error: {0}")]
    Registry(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("build error: {0}")]
    Build(String),

    #[error("state error: {0}")]
    State(String),

    #[error("scoring error for candidate `{candidate_id}`: {message}")]
    Scoring {
        candidate_id: String,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("budget error: {0}")]
    Budget(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn scoring(candidate_id: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Scoring {
            candidate_id: candidate_id.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Registry(_)
            | Error::Template(_)
            | Error::Config(_)
            | Error::Data(_)
            | Error::Budget(_)
            | Error::Json(_) => 2,
            Error::MissingArtifact(_) => 3,
            Error::Format(_) | Error::State(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
            _ => 4,
        }
    }
}

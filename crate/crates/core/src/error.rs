use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeldError>;

#[derive(Debug, Error)]
pub enum SeldError {
    /// Malformed or out-of-contract input data.
    #[error("input error: {0}")]
    Input(String),

    #[error("shape error in {op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("config error: {0}")]
    Config(String),

    /// More simultaneous same-class events than output tracks.
    #[error("capacity error: frame {frame} class {class} has {count} events for {tracks} tracks")]
    Capacity {
        frame: usize,
        class: usize,
        count: usize,
        tracks: usize,
    },

    #[error("optimizer error: non-finite gradient for parameter `{param}`")]
    Optimizer { param: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("scene spec error: {0}")]
    Spec(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SeldError {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        SeldError::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SeldError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        SeldError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            SeldError::Input(_)
                | SeldError::Shape { .. }
                | SeldError::Config(_)
                | SeldError::Capacity { .. }
                | SeldError::Spec(_)
                | SeldError::Format { .. }
                | SeldError::Io { .. }
        )
    }
}

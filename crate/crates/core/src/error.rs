use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that break a documented precondition. Every violation found is listed.
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    /// A configuration file that could not be parsed at all.
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// The explicit Euler scheme produced a non-finite state.
    #[error("divergence at step {step}, particle {particle}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    Divergence {
        step: usize,
        particle: usize,
        context: Option<String>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Validation(vec![message.into()])
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a label (e.g. `N=64, replica=3`) to a divergence error.
    pub fn with_context(self, label: impl Into<String>) -> Self {
        match self {
            Error::Divergence {
                step,
                particle,
                context,
            } => {
                let label = label.into();
                let context = Some(match context {
                    Some(inner) => format!("{label}, {inner}"),
                    None => label,
                });
                Error::Divergence {
                    step,
                    particle,
                    context,
                }
            }
            other => other,
        }
    }

    /// Process exit status: 1 validation, 2 divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parse { .. } => 1,
            Error::Divergence { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}

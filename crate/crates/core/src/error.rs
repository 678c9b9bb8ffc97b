use thiserror::Error;

use crate::asymptotics::BirchDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model spec failed validation: {}", .0.join("; "))]
    InvalidSpec(Vec<String>),

    #[error("manifest cell {cell} has probability 0 but positive empirical mass")]
    ZeroModelCell { cell: usize },

    #[error("information matrix is singular (rank {} of {})", .0.rank, .0.parameters)]
    RankDeficient(Box<BirchDiagnostics>),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

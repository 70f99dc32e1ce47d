use thiserror::Error;

use crate::Pid;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("operation requires a signed-mode sketch")]
    Mode,

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("pid {0} is not in the priority set")]
    NotTracked(Pid),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("duplicate index label `{0}`")]
    DuplicateIndex(String),
    #[error("output index `{0}` does not occur in either operand")]
    BadOutputIndex(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("rename is not injective: `{0}` is hit twice")]
    NonInjectiveRename(String),
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown output `{0}`")]
    UnknownOutput(String),
    #[error("unary operator `{0}` is not registered")]
    UnregisteredUnaryOp(String),
    #[error("missing binding for variable `{0}`")]
    MissingBinding(String),
    #[error("derivative is not compressible: {0}")]
    NotCompressible(String),
    #[error("invalid node: {0}")]
    InvalidNode(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("singular system")]
    Singular,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn syntax(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Syntax {
            line,
            column,
            message: message.into(),
        }
    }
}

use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("digit {digit} at depth {depth} exceeds child count {children}")]
    InvalidDigit {
        depth: usize,
        digit: u32,
        children: usize,
    },
    #[error("non-zero padding digit at depth {depth} after reaching a leaf")]
    InvalidPadding { depth: usize },
    #[error("non-finite loss in {head} head at coordinate {coord}")]
    NumericAbort { head: String, coord: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

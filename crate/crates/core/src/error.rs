use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that cannot be combined, invalid axes, wrong channel counts.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Arithmetic that has no finite answer, e.g. division by an exact zero.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed binary or image file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Malformed configuration text.
    #[error("config error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A checkpoint does not match the architecture it is loaded into.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("backward has already been run on this tape")]
    BackwardTwice,

    #[error(
        "non-finite loss at step {step} (lr = {lr:e}, ce = {ce}, dice = {dice}, total = {total})"
    )]
    NonFiniteLoss {
        step: usize,
        lr: f64,
        ce: f64,
        dice: f64,
        total: f64,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

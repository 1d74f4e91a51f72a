use alloc::boxed::Box;
use alloc::string::String;

use crate::minutiae::Template;

/// Errors produced by the pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Too few usable minutiae. The partial result is kept so callers can
    /// inspect what was found.
    #[error("low quality: {found} minutiae found, {required} required")]
    LowQuality {
        found: usize,
        required: usize,
        partial: Option<Box<Template>>,
    },
    #[error("capture rejected: quality {quality} below floor {floor}")]
    RejectedCapture { quality: u8, floor: u8 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("user `{0}` is already enrolled")]
    DuplicateUser(String),
    #[error("unknown user `{0}`")]
    UnknownUser(String),
    #[error("record for `{0}` is stale; re-enrollment required")]
    StaleRecord(String),
    #[error("unknown key id `{0}`")]
    UnknownKey(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

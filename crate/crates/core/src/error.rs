use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("identifier {0:#x} does not fit in 11 bits")]
    IdOutOfRange(u16),
    #[error("data length code {0} exceeds 8")]
    DlcOutOfRange(u8),
    #[error("payload length {payload} does not match dlc {dlc}")]
    PayloadLength { dlc: u8, payload: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StuffError {
    /// Six identical consecutive levels inside the stuffed region.
    #[error("stuff violation at stuffed bit {position}")]
    StuffViolation { position: usize },
    #[error("stuffed stream ended inside the stuffed region")]
    Truncated,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("node id {0} is already attached")]
    DuplicateNode(u16),
    #[error("a bus carries at most one officer")]
    SecondOfficer,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LearnError {
    #[error("frame id {id:#05x} attributed to both {first} and {second}")]
    AmbiguousOwner {
        id: u16,
        first: String,
        second: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PreventError {
    #[error("officer is not in prevent mode")]
    NotPreventing,
    #[error("{0} alerts are detect-only")]
    DetectOnly(&'static str),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Learn(#[from] LearnError),
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

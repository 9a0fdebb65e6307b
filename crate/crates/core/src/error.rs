use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("voice {voice} out of range (pattern has {voices} voices)")]
    VoiceOutOfRange { voice: usize, voices: usize },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no data: {0}")]
    NoData(&'static str),

    #[error("non-finite {component} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },

    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("parse error at `{field}`: {detail}")]
    Parse { field: String, detail: String },

    #[error("checksum mismatch: header says {expected}, content hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error("invalid message: {0}")]
    Message(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// Short machine-readable code used in service error replies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::VoiceOutOfRange { .. } => "out_of_range",
            Error::InvalidEvent(_) => "invalid_event",
            Error::Config(_) => "config",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NoData(_) => "no_data",
            Error::NonFiniteLoss { .. } => "non_finite",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Parse { .. } => "parse",
            Error::Checksum { .. } => "checksum",
            Error::Message(_) => "malformed_message",
            Error::Io(_) => "io",
        }
    }
}

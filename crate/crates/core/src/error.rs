use std::fmt;

/// Which structural check a binary container failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    VersionMismatch,
    Truncated,
    DimensionMismatch,
    BadHeader,
}

impl fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FormatErrorKind::BadMagic => "bad magic",
            FormatErrorKind::VersionMismatch => "version mismatch",
            FormatErrorKind::Truncated => "truncated payload",
            FormatErrorKind::DimensionMismatch => "dimension mismatch",
            FormatErrorKind::BadHeader => "malformed header",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error at byte {offset}: {kind}: {detail}")]
    Format {
        kind: FormatErrorKind,
        offset: u64,
        detail: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(kind: FormatErrorKind, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            offset,
            detail: detail.into(),
        }
    }

    pub fn format_kind(&self) -> Option<FormatErrorKind> {
        match self {
            Error::Format { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidArgument(format!($($arg)*)) };
}
pub(crate) use invalid;

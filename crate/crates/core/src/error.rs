use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    ShapeMismatch {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },
    Empty(&'static str),
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    /// A fact dated after the reference time.
    FutureFact { timestamp: i64, current: i64 },
    InvalidHalfLife(f64),
    InvalidThreshold(f64),
    NonFiniteGradient { param: String },
    NonFiniteLoss { epoch: usize },
    /// Label derivation found no fact with a recorded update.
    NoUpdates,
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "shape mismatch in {op}: {}x{} vs {}x{}",
                left[0], left[1], right[0], right[1]
            ),
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::IndexOutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::FutureFact { timestamp, current } => write!(
                f,
                "fact timestamp {timestamp} is after the current time {current}"
            ),
            Error::InvalidHalfLife(v) => write!(f, "half-life must be positive, got {v}"),
            Error::InvalidThreshold(v) => write!(f, "threshold must lie in [0, 1], got {v}"),
            Error::NonFiniteGradient { param } => {
                write!(f, "non-finite gradient for parameter `{param}`")
            }
            Error::NonFiniteLoss { epoch } => write!(f, "loss became non-finite at epoch {epoch}"),
            Error::NoUpdates => write!(
                f,
                "no fact has any update interval; use the fixed-threshold label policy"
            ),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

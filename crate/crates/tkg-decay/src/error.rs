use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] tkg_decay_core::Error),
}

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad command line; emitted by the argument parser.
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const INPUT: i32 = 5;
    pub const STAGE: i32 = 6;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use tkg_decay_core::Error as C;
        match self {
            Error::Io { .. } => exit::IO,
            Error::Parse { .. } | Error::Format { .. } => exit::INPUT,
            Error::Config(_) => exit::CONFIG,
            Error::Core(C::InvalidConfig(_) | C::InvalidThreshold(_) | C::InvalidHalfLife(_)) => {
                exit::CONFIG
            }
            Error::Core(_) => exit::STAGE,
        }
    }

    /// Short stable name of the failure class.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            exit::IO => "io",
            exit::INPUT => "input",
            exit::CONFIG => "config",
            _ => "stage",
        }
    }
}

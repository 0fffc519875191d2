use std::path::Path;

/// Process exit codes of the command line tool.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const DEGENERATE_INPUT: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const USAGE: i32 = 64;
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unsupported schema version {found}; this build reads version {supported}")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error(transparent)]
    Core(#[from] arraycal_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, e: &serde_json::Error) -> Self {
        Error::Parse {
            context: context.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_degenerate_input() => exit::DEGENERATE_INPUT,
            Error::Core(arraycal_core::Error::SingularNormalEquations { .. }) => exit::DIVERGED,
            Error::Usage(_) => exit::USAGE,
            _ => exit::FAILURE,
        }
    }

    /// One-line hint printed after the error message.
    pub fn remedy(&self) -> Option<&'static str> {
        match self {
            Error::Io { .. } => Some("check the path and permissions"),
            Error::Parse { .. } | Error::SchemaMismatch(_) => {
                Some("compare the file against the output of `arraycal simulate`")
            }
            Error::UnsupportedVersion { .. } => Some("regenerate the file with this version of arraycal"),
            Error::Core(e) if e.is_degenerate_input() => {
                Some("the geometry cannot be calibrated; run `arraycal observability` on the dataset")
            }
            Error::Core(arraycal_core::Error::SingularNormalEquations { .. }) => {
                Some("the problem is not observable from this start; run `arraycal observability`")
            }
            Error::Usage(_) => Some("see `arraycal --help`"),
            _ => None,
        }
    }
}

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// [`Error::exit_class`] groups them into the three failure classes the CLI
/// reports through its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("singular design: column {column} is linearly dependent on earlier columns")]
    SingularDesign { column: usize },
    #[error("degenerate test: {0}")]
    Degenerate(String),
    #[error("{failed} of {reps} replicates failed (limit 1%); first failure: {first}")]
    ReplicateFailures {
        failed: usize,
        reps: usize,
        first: String,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Config(_) => ExitClass::Config,
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::Io(_)
            | Error::Csv(_) => ExitClass::Data,
            Error::SingularDesign { .. } | Error::Degenerate(_) | Error::ReplicateFailures { .. } => {
                ExitClass::Numerical
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

//! Crate-wide error type.
//!
//! Errors are grouped into four classes that the command-line front end maps
//! onto process exit codes: usage (1), configuration (2), data (3) and
//! runtime (4). Library code never exits; it only returns `Error`.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed record in an input file, reported with its 1-based line.
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    /// Input file header or field layout does not match the expected schema.
    #[error("schema mismatch in {path}: {msg}")]
    Schema { path: String, msg: String },

    /// Cross-file referential failure, e.g. an event naming an unknown node.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A lookup required a label or feature that no record provides.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// Underlying I/O failure while reading or writing data files.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Invalid or unreadable run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Unreadable or version-incompatible model checkpoint.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// An API precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Tensor operands with incompatible shapes.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Integrity(_)
            | Error::Coverage(_)
            | Error::Checkpoint(_)
            | Error::Io(_) => 3,
            Error::Contract(_) | Error::Shape(_) | Error::Divergence { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps these onto process exit codes, see [`Error::exit_code`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Invalid innovation law or model parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// A config file key failed to parse or validate.
    #[error("config error at line {line}, key `{key}`: {message}")]
    ConfigKey {
        key: String,
        line: usize,
        message: String,
    },

    /// An operation was called on a law it does not support.
    #[error("domain error: {0}")]
    Domain(String),

    /// Caller misuse, e.g. asking for growth diagnostics without recorded innovations.
    #[error("usage error: {0}")]
    Usage(String),

    /// The raw path left the floating-point range.
    #[error("X_k overflowed at k = {index}")]
    Overflow { index: usize },

    /// Some coefficient phi + b_k is exactly zero.
    #[error("degenerate path: phi + b_k = 0 at k = {index}")]
    DegeneratePath { index: usize },

    /// The likelihood does not depend on (s, x).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Too many replications failed for the experiment to be meaningful.
    #[error("experiment failed: {failed} of {reps} replications failed (first: {first_reason})")]
    ExperimentFailed {
        failed: usize,
        reps: usize,
        first_reason: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Exit code used by the `rca` binary: 2 for usage and config problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::ConfigKey { .. }
            | Error::Domain(_)
            | Error::Usage(_)
            | Error::Io(_) => 2,
            Error::Overflow { .. }
            | Error::DegeneratePath { .. }
            | Error::DegenerateData(_)
            | Error::Numerical(_)
            | Error::ExperimentFailed { .. } => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

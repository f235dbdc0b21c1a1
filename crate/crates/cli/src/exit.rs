use std::fmt;

use fcbfuse::Error;

pub const OK: i32 = 0;
pub const GRADCHECK: i32 = 1;
pub const CONFIG: i32 = 2;
pub const DATA: i32 = 3;
pub const NUMERIC: i32 = 4;
pub const CHECKPOINT: i32 = 5;

/// A failure carrying the process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl CliError {
    pub fn new(code: i32, msg: impl Into<String>) -> Self {
        CliError { code, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new(CONFIG, msg)
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::new(DATA, msg)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidArgument { .. } | Error::Shape { .. } | Error::Json(_) => CONFIG,
            Error::NonFinite { .. } | Error::NonDeterministic(..) => NUMERIC,
            Error::Checkpoint { .. } | Error::MissingParam(_) | Error::MissingGrad(_) | Error::NonScalarRoot(_) => {
                CHECKPOINT
            }
            Error::Dataset { .. }
            | Error::MissingMask(_)
            | Error::Decode { .. }
            | Error::EmptyEvaluation
            | Error::Io(_)
            | Error::Csv(_) => DATA,
        };
        CliError::new(code, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

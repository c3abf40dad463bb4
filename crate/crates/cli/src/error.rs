use pdr_core::adapter::AdapterError;
use pdr_core::dataset::DatasetError;
use pdr_core::eval::EvalError;
use pdr_core::iekf::FilterError;
use pdr_core::sim::SimError;
use std::fmt;
use std::path::Path;

pub const USAGE: u8 = 2;
pub const WEIGHTS: u8 = 3;
pub const MISMATCH: u8 = 4;
pub const NUMERIC: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(USAGE, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let code = if matches!(e, DatasetError::EmptyOverlap) {
            MISMATCH
        } else {
            USAGE
        };
        Self::new(code, e.to_string())
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        Self::new(WEIGHTS, e.to_string())
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        let code = if matches!(e, FilterError::Config(_)) {
            USAGE
        } else {
            NUMERIC
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match e {
            EvalError::Empty
            | EvalError::LengthMismatch { .. }
            | EvalError::TimestampMismatch { .. } => MISMATCH,
            EvalError::Filter(ref f) if !matches!(f, FilterError::Config(_)) => NUMERIC,
            _ => USAGE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::usage(format!("invalid simulation spec: {e}"))
    }
}

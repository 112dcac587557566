use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed tabular input. `row` is the 1-based data row (header excluded),
    /// `column` the 1-based column; either may be absent for file-level problems.
    #[error("{}{message}", location(*.row, *.column))]
    Parse {
        row: Option<usize>,
        column: Option<usize>,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("prevalence calibration failed for class {class}: target {target}, best {best} after {iterations} iterations")]
    Calibration {
        class: usize,
        target: f64,
        best: f64,
        iterations: usize,
    },

    #[error("class {class} has {available} negatives, {required} needed for mixed noise")]
    InsufficientNegatives {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing noise ledger: {0}")]
    MissingLedger(String),
}

fn location(row: Option<usize>, column: Option<usize>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("row {r}, column {c}: "),
        (Some(r), None) => format!("row {r}: "),
        (None, Some(c)) => format!("column {c}: "),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(row: Option<usize>, column: Option<usize>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column,
            message: message.into(),
        }
    }
}

use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unit id {unit} out of range for a layer with {num_units} units")]
    UnitOutOfRange { unit: u32, num_units: usize },

    #[error("label {label} of sample {sample} is not in its active set")]
    LabelNotActive { sample: usize, label: u32 },

    #[error("sparse pattern mismatch at sample {sample}")]
    PatternMismatch { sample: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },

    #[error("truncated input: {0}")]
    Truncated(&'static str),

    #[error("unexpected trailing bytes after payload")]
    TrailingData,

    #[error("row count mismatch: {features} feature rows, {labels} labels")]
    RowCountMismatch { features: usize, labels: usize },

    #[error("label {label} at row {row} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u32,
        num_classes: u32,
    },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("ragged CSV row {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: u64,
        found: u64,
    },

    #[error("non-numeric CSV cell at line {line}, column {column}: {value:?}")]
    NonNumeric {
        line: u64,
        column: usize,
        value: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }
}

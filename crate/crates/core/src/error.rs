use std::path::PathBuf;

/// Errors raised by ingestion, model fitting, estimation and simulation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty file: no data rows")]
    EmptyFile,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("column `{0}` is mapped more than once")]
    DuplicateColumn(String),

    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("non-numeric value `{value}` at row {row}, column `{column}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("non-binary value {value} at row {row}, column `{column}`")]
    NonBinary {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("non-finite value at row {row}, column `{column}`")]
    NonFinite { row: usize, column: String },

    #[error("no sampled rows (every delta is 0)")]
    NoSampledRows,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid formula `{formula}`: {reason}")]
    Formula { formula: String, reason: String },

    #[error("invalid model suite: {0}")]
    Suite(String),

    #[error("rank-deficient design: term `{0}` is aliased")]
    Aliased(String),

    #[error("{model} model: {source}")]
    Nuisance {
        model: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid unit scale: lo ({lo}) must be below hi ({hi})")]
    Scale { lo: f64, hi: f64 },

    #[error("value outside the allowed range: {0}")]
    Domain(String),

    #[error("first-stage effect is zero")]
    ZeroFirstStage,

    #[error("bootstrap: {failed} of {total} replicates were non-finite")]
    Bootstrap { failed: usize, total: usize },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("no replicates")]
    NoReplicates,
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn nuisance(model: &'static str, source: Error) -> Self {
        Error::Nuisance {
            model,
            source: Box::new(source),
        }
    }
}

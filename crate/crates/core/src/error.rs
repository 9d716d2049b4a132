use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dataset file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric or non-finite value {value:?} at row {row}, column {column:?}")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),

    #[error("dataset needs at least two classes, found {0}")]
    SingleClass(usize),

    #[error("class {class} has {count} sample(s); cannot stratify")]
    CannotStratify { class: usize, count: usize },

    #[error("class {0} has no samples")]
    EmptyClass(usize),

    #[error("non-finite activation in layer {0}")]
    NonFinite(usize),

    #[error("training diverged for client {client}")]
    Diverged { client: usize },

    #[error("global parameters became non-finite")]
    GlobalNonFinite,

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("value {value} at coordinate {index} exceeds the fixed-point range")]
    Overflow { index: usize, value: f64 },

    #[error("client {0} is not a participant of this session")]
    UnknownParticipant(usize),

    #[error("secure aggregation aborted: {0}")]
    ProtocolAbort(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by user input rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Param(_))
    }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("subject {subject} (line {line}): more than one censoring row")]
    DuplicateCensoring { subject: String, line: usize },

    #[error("subject {subject}: no censoring row")]
    MissingCensoring { subject: String },

    #[error("subject {subject} (line {line}): event at {time} after censoring time {censoring}")]
    EventAfterCensoring { subject: String, line: usize, time: f64, censoring: f64 },

    #[error("subject {subject} (line {line}): event times not strictly ascending at {time}")]
    NonAscendingEvents { subject: String, line: usize, time: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("line {line}: unknown subject {subject}")]
    UnknownSubject { subject: String, line: usize },

    #[error("line {line}: column {column} expects {expected}, got {value:?}")]
    WrongKind { line: usize, column: String, expected: &'static str, value: String },

    #[error("missing required column {0}")]
    MissingColumn(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("no events to capture")]
    NoEvents,

    #[error("window too small for jackknife (t = {t}, n = {n})")]
    WindowTooSmall { t: f64, n: usize },

    #[error("missing covariate values: {0}")]
    MissingCovariates(String),

    #[error("dataset has no covariates")]
    NoCovariates,

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("no comparable pairs")]
    NoComparablePairs,

    #[error("model format: {0}")]
    Format(String),

    #[error("simulation: {0}")]
    Simulation(String),

    #[error("replicate {replicate}: {source}")]
    Replicate { replicate: usize, source: Box<Error> },
}

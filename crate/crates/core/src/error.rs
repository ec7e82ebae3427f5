use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: record {row} has {found} fields, expected {expected}")]
    Structural {
        row: usize,
        found: usize,
        expected: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("every column was excluded from serialization")]
    EmptySerialization,

    #[error("corpus is empty after filtering")]
    EmptyCorpus,

    #[error("no target candidate in dataset `{0}`")]
    NoTarget(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("no labeled examples: every row is missing target `{0}`")]
    EmptyExamples(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("embedding failed: {0}")]
    Embed(String),

    #[error("embedding contract violated: expected dimension {expected}, got {got}")]
    Contract { expected: usize, got: usize },

    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("data consistency: {0}")]
    DataConsistency(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("no dataset survived the classification filters")]
    EmptyReport,

    #[error("cluster ratio undefined: {0}")]
    Cluster(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

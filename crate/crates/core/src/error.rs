use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` named in the role manifest is not present in the header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("column `{column}`: unknown categorical level `{level}` (known levels: {known:?})")]
    UnknownLevel {
        column: String,
        level: String,
        known: Vec<String>,
    },

    #[error("schema mismatch: missing columns {missing:?}, unexpected columns {extra:?}")]
    Schema {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("covariance of {component} is not positive definite even after ridge {ridge:e}")]
    NotPositiveDefinite { component: String, ridge: f64 },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error(
        "exact Ising normalizer needs 2^{h} states but the cap is h <= {max}; \
         only pseudo-likelihood operations are available for this model"
    )]
    IsingTooLarge { h: usize, max: usize },

    #[error("state value {value} is not in the {domain} domain")]
    DomainMismatch { value: i8, domain: &'static str },

    #[error("weighted rows contain a single response class")]
    SingleClass,

    #[error("row {0} has zero density under every component")]
    DegenerateRow(usize),

    #[error("cluster {cluster} has {size} members, below the minimum of {min}")]
    RestartRequired {
        cluster: usize,
        size: usize,
        min: usize,
    },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported model document schema version {0}")]
    SchemaVersion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

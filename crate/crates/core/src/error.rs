use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("invalid sample: {0}")]
    Sample(String),
    #[error("sample has no present attributes")]
    EmptySample,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{kind} protocol requires an importance ranking")]
    MissingRanking { kind: &'static str },
    #[error("labels are constant; importance is undefined")]
    ConstantLabels,
    #[error("empty marginal pool for column {0}")]
    EmptyPool(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("no tabular attributes to score")]
    NoAttributes,
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("schema fingerprint mismatch: checkpoint {expected}, data {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

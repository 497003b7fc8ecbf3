use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the modeling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{0}: no valid rows")]
    NoValidRows(PathBuf),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("network has no nodes")]
    EmptyNetwork,

    #[error("edge references unknown node {0}")]
    UnknownNode(u64),

    #[error("duplicate node id {0}")]
    DuplicateNode(u64),

    #[error("edge ({u}, {v}) has invalid length {length}")]
    InvalidEdgeLength { u: u64, v: u64, length: f64 },

    #[error("self-loop on node {0}")]
    SelfLoop(u64),

    #[error("unknown attribute layer `{0}`")]
    UnknownLayer(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{0}` already exists")]
    ColumnCollision(String),

    #[error("negative value {value} in column `{column}`")]
    NegativeValue { column: String, value: f64 },

    #[error("not enough rows: n = {n}, p = {p}")]
    TooFewRows { n: usize, p: usize },

    #[error("design matrix is rank deficient; offending columns: {columns:?}")]
    RankDeficient { columns: Vec<String> },

    #[error("column mismatch: expected {expected:?}, got {found:?}")]
    ColumnMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("input has zero variance")]
    ZeroVariance,

    #[error("need at least {needed} distinct locations, found {found}")]
    TooFewLocations { needed: usize, found: usize },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::LinalgError;
use crate::model::{Hyperparams, ParamVector};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("hyperparameters must be positive and finite (alpha={alpha}, beta={beta})")]
    InvalidHyperparams { alpha: f64, beta: f64 },
    #[error("numerical breakdown at step {step}: {reason}")]
    NumericalBreakdown { step: usize, reason: String, last_good: Box<LastGoodState> },
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse { row: usize, col: usize, message: String },
    #[error("missing value at row {row}, column {col}")]
    MissingValue { row: usize, col: usize },
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// State preserved when training aborts on a non-finite quantity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LastGoodState {
    pub step: usize,
    pub params: ParamVector,
    pub hyper: Hyperparams,
}

pub type Result<T> = std::result::Result<T, Error>;

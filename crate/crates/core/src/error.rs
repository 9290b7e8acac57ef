use thiserror::Error;

use crate::precision::Precision;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: precision mismatch (expected {expected}, found {found})")]
    PrecisionMismatch {
        op: &'static str,
        expected: Precision,
        found: Precision,
    },

    #[error("cast scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grids are not nested: fine has {fine} nodes per dimension, coarse has {coarse}")]
    NonNestedGrids { fine: usize, coarse: usize },

    #[error("level {level}: matrix entry {value} overflows binary16")]
    Fp16Overflow { level: usize, value: f64 },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("level {level}: vector carries {found}, level runs in {expected}")]
    LevelPrecision {
        level: usize,
        expected: Precision,
        found: Precision,
    },

    #[error("iterative refinement diverged at iteration {iteration} (residual norm {residual})")]
    Diverged { iteration: usize, residual: f64 },

    #[error("malformed matrix dump: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

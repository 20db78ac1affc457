use thiserror::Error;

/// Errors raised by the numerical operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("horizon exceeded: requested index {requested}, materialized up to {horizon}")]
    Horizon { requested: u64, horizon: u64 },

    #[error("degenerate weight: {0}")]
    DegenerateWeight(String),

    #[error("degenerate set: {0}")]
    DegenerateSet(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("not a renewal sequence: f_{index} = {value:e} is negative")]
    NotRenewal { index: u64, value: f64 },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("index sets are not nested: K_{index} is not contained in K_{next}", next = .index + 1)]
    Nesting { index: usize },

    #[error("support budget exceeded: {entries} entries > {limit}")]
    Budget { entries: usize, limit: usize },

    #[error("point {0} lies on a cell boundary or in the truncated region")]
    Domain(String),

    #[error("orbit left the domain at step {step}: {reason}")]
    OrbitDomain { step: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("value is not representable exactly: {0}")]
    NotRational(String),
}

pub type Result<T> = std::result::Result<T, Error>;

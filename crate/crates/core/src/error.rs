use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error(
        "population cap exceeded in generation {generation}: more than {cap} individuals \
         (reduce j or t, or increase the scale x_m of xi)"
    )]
    PopulationCap { generation: usize, cap: usize },

    #[error("grid of {requested} points exceeds the cap of {cap}")]
    GridTooLarge { requested: usize, cap: usize },

    #[error("path horizon {horizon} is too short for u = {u}: at least {required} is needed")]
    HorizonTooShort { horizon: f64, u: f64, required: f64 },

    #[error("table covers [0, {available}] but the value at {requested} was requested")]
    TableDomain { available: f64, requested: f64 },

    #[error("grid steps differ: {left} vs {right}")]
    GridMismatch { left: f64, right: f64 },

    #[error("cdf grid is not nondecreasing at index {index}")]
    NonMonotone { index: usize },

    #[error("no sign change in the bracket while solving t*l(c) = c^alpha for t = {t}")]
    NoBracket { t: f64 },

    #[error("value overflows even in log space: {0}")]
    Overflow(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("model does not satisfy the conditions for this run: {0}")]
    Conditions(String),

    #[error("at least {excluded} of {total} replicas breached the population cap (allowed fraction {allowed}); reduce j or t, or increase the scale x_m of xi")]
    TooManyExclusions {
        excluded: usize,
        total: usize,
        allowed: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

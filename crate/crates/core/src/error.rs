use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row ({state}, {action}) invalid: {detail}")]
    InvalidTransition {
        state: usize,
        action: usize,
        detail: String,
    },

    #[error("reward out of [0, R_max] at ({state}, {action}): {value} (R_max = {r_max})")]
    RewardOutOfRange {
        state: usize,
        action: usize,
        value: f64,
        r_max: f64,
    },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid policy at state {state}: {detail}")]
    InvalidPolicy { state: usize, detail: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unrealizable: positive numerator {numerator} at ({state}, {action}) meets zero data density")]
    Unrealizable {
        state: usize,
        action: usize,
        numerator: f64,
    },

    #[error("policy uncovered at ({state}, {action})")]
    PolicyUncovered { state: usize, action: usize },

    #[error("function class member {index}: {detail}")]
    ClassMember { index: usize, detail: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("enumeration too large: more than {cap} candidates")]
    EnumerationTooLarge { cap: usize },

    #[error("premise violated: advantage inner product {inner} < -{eps}")]
    PremiseViolated { inner: f64, eps: f64 },

    #[error("linear solve failed: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

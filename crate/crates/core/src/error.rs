use thiserror::Error;

/// Errors surfaced by model construction, inference, learning, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("state {state} out of range for cause {cause} (cardinality {cardinality})")]
    StateOutOfRange {
        cause: String,
        state: u32,
        cardinality: usize,
    },

    #[error("operation requires {required} combination, model uses {found}")]
    WrongCombination {
        required: &'static str,
        found: String,
    },

    #[error("conditioning on zero-probability evidence: p(E={effect} | c) = 0")]
    ZeroProbabilityEvidence { effect: u32 },

    #[error("joint outcome space {size} exceeds enumeration cap {cap}")]
    EnumerationCapExceeded { size: u128, cap: u128 },

    #[error("non-positive Poisson rate {rate} for mechanism {mechanism}, config {config}")]
    NonPositiveRate {
        mechanism: usize,
        config: usize,
        rate: f64,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dataset incompatible with model: {0}")]
    IncompatibleData(String),

    #[error("all {restarts} EM restarts failed to produce a finite objective")]
    EmFailed { restarts: usize },

    #[error("closed-form marginal likelihood is defined for multinomial families only; mechanism {mechanism} is Poisson")]
    PoissonNotScorable { mechanism: usize },

    #[error("observable map is constant (sigma_max = 0); model is degenerate")]
    DegenerateObservableMap,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    File { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

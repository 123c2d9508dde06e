use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dimension mismatch: expected length {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate codeword: {0}")]
    DegenerateCodeword(String),

    #[error("singular parameterization: {0}")]
    SingularParameterization(String),

    #[error("boresight singularity: elevation {elevation} rad has no defined azimuth")]
    Boresight { elevation: f64 },

    #[error("allocation infeasible: FIM singular at point {index} {position:?} for every allocation")]
    InfeasibleAllocation { index: usize, position: [f64; 3] },

    #[error("pattern data {source_name}: {message}")]
    PatternData { source_name: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

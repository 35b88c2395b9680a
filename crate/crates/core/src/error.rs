use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise variance {index} is {value}, must be at least {floor}")]
    InvalidVariance { index: usize, value: f64, floor: f64 },

    #[error("mixing proportions are not on the simplex: {0}")]
    NotSimplex(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("component {component} has zero responsibility mass")]
    EmptyComponent { component: usize },

    #[error("second-moment matrix of component {component} is rank deficient")]
    RankDeficientMoments { component: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported model schema version {0}")]
    SchemaVersion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for the failures that end a fit with `StopReason::Degenerate`.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Error::EmptyComponent { .. } | Error::RankDeficientMoments { .. }
        )
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not hermitian (deviation {deviation:.3e} exceeds {tolerance:.1e})")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state density is not faithful: smallest eigenvalue {min_eigenvalue:.3e}")]
    NotFaithful { min_eigenvalue: f64 },

    #[error("state density has trace {trace} instead of 1")]
    NotNormalized { trace: f64 },

    #[error("matrix is not positive: eigenvalue {min_eigenvalue:.3e} below {tolerance:.1e}")]
    NotPositive { min_eigenvalue: f64, tolerance: f64 },

    #[error("eigenvalue {eigenvalue} lies within 1e-12 of interval endpoint {endpoint}")]
    BoundaryAmbiguous { eigenvalue: f64, endpoint: f64 },

    #[error("maps do not commute: commutator norm {norm:.3e}")]
    NonCommuting { norm: f64 },

    #[error("operator is not a contraction on the GNS space: norm {norm}")]
    NotContraction { norm: f64 },

    #[error("linear solve is singular ({0}); the state density is probably not faithful")]
    SingularSolve(String),

    #[error("series bound {bound:.3e} exceeds the overflow guard; rescale the generator rates")]
    SeriesOverflow { bound: f64 },

    #[error("sphere of radius {n} in the free group on {r} generators has {count} words, above the cap {cap}; use the recurrence path")]
    EnumerationCap { r: usize, n: usize, count: u128, cap: usize },

    #[error("mean limit routes disagree by {difference:.3e} in trace norm")]
    MeanLimitDisagreement { difference: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn at(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

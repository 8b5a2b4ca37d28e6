use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter space: {0}")]
    InvalidSpace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("Cholesky factorization failed (jitter reached {jitter:.3e}, condition estimate {condition:.3e})")]
    Cholesky { jitter: f64, condition: f64 },

    #[error("implausibility denominator is zero")]
    ZeroDenominator,

    #[error("degenerate marginal in dimension {0}: fewer than 2 distinct values")]
    DegenerateMarginal(usize),

    #[error("quantile inversion did not converge in dimension {0}")]
    QuantileInversion(usize),

    #[error("proposal covariance is rank deficient")]
    RankDeficient,

    #[error("particle {0} violates the wave chain")]
    ChainViolation(usize),

    #[error("degenerate implausibility; cannot shrink")]
    DegenerateImplausibility,

    #[error("no particle survived the cutoff; the entire space is implausible")]
    NoSurvivors,

    #[error("fewer than 2 unique training points")]
    TooFewUnique,

    #[error("observation {index} is not strictly positive ({value})")]
    NonPositiveObservation { index: usize, value: f64 },

    #[error("log-likelihood {0} is not negative")]
    NonNegativeLogLik(f64),

    #[error("acceptance rate below {threshold:e} after {proposals} proposals ({accepted} accepted)")]
    AcceptanceTooLow { threshold: f64, proposals: u64, accepted: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

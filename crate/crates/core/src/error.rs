use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{what} did not converge within {iterations} iterations")]
    NotConverged {
        what: &'static str,
        iterations: usize,
    },
    #[error("pair is not stabilizable (closed-loop spectral radius {rho})")]
    NotStabilizable { rho: f64 },
    #[error("matrix is rank deficient (rank {rank}, need {required})")]
    RankDeficient { rank: usize, required: usize },
    #[error("matrix is near-defective (condition estimate {cond:e})")]
    NearDefective { cond: f64 },
    #[error("matrix is not Schur stable (spectral radius {rho} after margin)")]
    NotSchurStable { rho: f64 },
    #[error("norm-bound certificate not found within {0} powers")]
    CertificateHorizon(usize),
    #[error("quantizer overflow: |y - center| = {distance} exceeds half width {half_width}")]
    QuantizerOverflow { distance: f64, half_width: f64 },
    #[error("quantizer index {index} outside 1..={max}")]
    IndexOutOfRange { index: u64, max: u64 },
    #[error("unobservable pair (C, A)")]
    Unobservable,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invariant breach at k = {k}: {what}")]
    InvariantBreach { k: u64, what: String },
    #[error("numeric range exhausted at k = {k}: {what}")]
    NumericRange { k: u64, what: String },
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

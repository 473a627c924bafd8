//! Error type shared across the estimation pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CovError>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CovError {
    #[error("spline order must be at least 1, got {0}")]
    InvalidOrder(i64),

    #[error("evaluation point {0} lies outside [0, 1]; no extrapolation")]
    OutOfDomain(f64),

    #[error("design has {rows} rows but the basis dimension is {cols}; the fit is under-determined")]
    UnderDetermined { rows: usize, cols: usize },

    #[error("design matrix is singular or numerically rank-deficient")]
    SingularDesign,

    #[error("GCV denominator degenerates: basis dimension {dim} >= grid size {n}")]
    DegenerateGcv { dim: usize, n: usize },

    #[error("grid size {0} too small for the knot formula (log log N undefined)")]
    GridTooSmallForFormula(usize),

    #[error("knot selection has an empty candidate pool (need n >= 4, got n = {0})")]
    EmptyCandidatePool(usize),

    #[error("invalid knot selection parameter: {0}")]
    InvalidKnotParameter(String),

    #[error("dataset invalid: {0}")]
    InvalidDataset(String),

    #[error("lag {0} is out of range (need 0 <= h < 1)")]
    InvalidLag(f64),

    #[error("lag {lag} exceeds the curve's upper limit h0 = {h0}")]
    LagBeyondRange { lag: f64, h0: f64 },

    #[error("quadrature needs at least 2 points, got {0}")]
    TooFewQuadPoints(usize),

    #[error("h grid is empty")]
    EmptyHGrid,

    #[error("h grids of the inputs do not match")]
    GridMismatch,

    #[error("trajectory index {index} out of range for {n} subjects")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("Cholesky factorization failed; matrix is not positive definite")]
    CholeskyFailure,

    #[error("all eigenvalues are non-positive; nothing to retain")]
    NoPositiveEigenvalues,

    #[error("eigenvalue {0} is not positive; cannot form FPC scores")]
    ZeroEigenvalue(usize),

    #[error("confidence level alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("multiplier simulation needs at least 100 replicates, got {0}")]
    TooFewReplicates(usize),

    #[error("invalid covariance model: {0}")]
    InvalidModelSpec(String),

    #[error("Bessel argument must be positive, got {0}")]
    InvalidBesselArgument(f64),

    #[error("correlation threshold must lie in (0, 1), got {0}")]
    InvalidRho(f64),

    #[error("covariance matrix not positive semidefinite after jitter escalation")]
    NotPositiveSemidefinite,

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} replications failed (limit 5%); first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

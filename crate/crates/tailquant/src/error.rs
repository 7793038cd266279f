use thiserror::Error;

/// Errors shared across the estimation pipeline.
///
/// Numerical routines never return NaN to signal failure; anything that can
/// go wrong for data reasons (empty windows, collapsed spacings, ...) gets
/// its own variant so callers can tell recoverable degeneracies apart from
/// caller bugs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),

    #[error("bad sample: {0}")]
    BadSample(String),

    #[error("level must lie in (0, 1), got {0}")]
    BadLevel(f64),

    /// The closed ball around the evaluation point carries no positive
    /// kernel weight, so ratio estimators are undefined there.
    #[error("no positive kernel weight at the evaluation point")]
    EmptyWindow,

    #[error("K_z is defined for positive arguments only, got u = {0}")]
    KDomain(f64),

    #[error("K_z inverse needs 1 + z*t > 0, got z = {z}, t = {t}")]
    KInverseDomain { z: f64, t: f64 },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("invalid weights: {0}")]
    BadWeights(String),

    /// A quantile spacing used by the tail fit collapsed to zero
    /// (1-based index into the spacing sequence).
    #[error("quantile spacing {index} is zero; the tail fit is degenerate")]
    DegenerateSpacing { index: usize },

    /// An injected quantile oracle decreased where it must not.
    #[error("quantile oracle is not monotone at spacing {index}")]
    NonMonotone { index: usize },

    #[error("extrapolation level beta = {beta} must not exceed the anchor level alpha = {alpha}")]
    LevelOrder { beta: f64, alpha: f64 },

    #[error("need at least {need} positively weighted exceedances, got {got}")]
    InsufficientExceedances { got: usize, need: usize },

    #[error("levels are not geometric; the covariance formulas need tau_j = r^(j-1)")]
    NonGeometricLevels,

    #[error("selection failed: {0}")]
    SelectionFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Error type shared by every estimator in the crate.

use thiserror::Error;

/// Failures raised by the estimators, the simulation harness and the
/// bootstrap engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A regressor block has effective rank below its column count.
    #[error("rank deficient design: effective rank {rank} < {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    /// An input matrix or vector contained NaN or an infinity.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Shapes of the supplied blocks do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The observed sample violates a structural requirement.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A stratum lacks one instrument arm or has no first-stage variation.
    #[error("degenerate stratum {stratum}: {reason}")]
    DegenerateStratum { stratum: usize, reason: String },

    /// A saturated propensity cell contains only one instrument arm.
    #[error("covariate cell {cell} contains a single instrument arm")]
    NoOverlapCell { cell: usize },

    /// The estimated complier share is below the identification floor.
    #[error("estimated complier share {pc_hat} is below the floor {floor}")]
    NoCompliers { pc_hat: f64, floor: f64 },

    /// Even a single propensity stratum cannot satisfy the validity rules.
    #[error("propensity scores cannot be partitioned into valid strata: {0}")]
    Unpartitionable(String),

    /// Fewer than half of the bootstrap replicates succeeded.
    #[error("only {effective} of {requested} bootstrap replicates succeeded")]
    TooManyFailures { effective: usize, requested: usize },

    /// A data-generating specification is malformed.
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),

    /// Exact enumeration was requested for a continuous covariate law.
    #[error("covariate law has infinite support; exact oracle unavailable")]
    InfiniteSupport,

    /// A caller-supplied parameter is out of range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Errors that signal a sample on which the estimand is not identified.
    ///
    /// Bootstrap and Monte Carlo replicates hitting one of these are dropped
    /// and counted instead of aborting the run.
    pub fn is_identification_failure(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::NoCompliers { .. }
                | Error::Unpartitionable(_)
                | Error::DegenerateStratum { .. }
                | Error::NoOverlapCell { .. }
                | Error::InvalidData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

//! Regression core: OLS with HAC errors, local projections, geometric
//! response fits and rolling windows.

mod geometric;
mod lp;
mod ols;
mod rolling;

use thiserror::Error;

pub use geometric::{
    fit_geometric, wald_equality, FitFlag, FitMethod, GeometricFit, WaldEquality, GMM_MAX_CONDITION, RHO_LOWER,
    RHO_UPPER,
};
pub use lp::{local_projection_irf, CrossHorizonCov, IrfEstimate, LpMode, LpOptions, MIN_LP_OBS};
pub use ols::{gram_inverse, hac_long_run_cov, ols_hac, RegressionResult, RANK_TOL};
pub use rolling::{rolling_fit, rolling_window_count, RollingPoint, RollingSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EconError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("design has {rows} rows but the outcome has {len} values")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("{nobs} observations cannot identify {params} parameters")]
    TooFewObservations { nobs: usize, params: usize },
    #[error("horizons must be positive and strictly increasing")]
    InvalidHorizons,
    #[error("horizon {horizon}: {nobs} usable observations, need {min}")]
    InsufficientOverlap { horizon: usize, nobs: usize, min: usize },
    #[error("misaligned inputs: {0}")]
    MisalignedIndex(String),
    #[error("geometric fit needs at least 3 horizons, got {0}")]
    TooFewHorizons(usize),
    #[error("window of {window} months plus horizon {max_h} exceeds the {len} aligned months")]
    WindowTooLong { window: usize, len: usize, max_h: usize },
}

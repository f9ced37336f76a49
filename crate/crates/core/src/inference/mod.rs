//! Resampling and multiple-testing machinery.
//!
//! Every resampling routine draws replication `b` from its own substream
//! `substream(seed, b)`, so results do not depend on the rayon pool size.

mod bootstrap;
mod falsify;
mod multiple;
mod resample;

pub use bootstrap::{fisher_z, fisher_z_ci, moving_block_bootstrap, moving_block_indices, parametric_irf_bootstrap, ParametricBootstrap};
pub use falsify::{lead_lag_test, permutation_falsification, LeadLagRow, PermutationResult};
pub use multiple::{holm_adjust, romano_wolf_stepdown, RwModel, FEW_CLUSTERS};
pub use resample::{jackknife_se, time_block_bootstrap, JackknifeResult, TimeBlockResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::econometrics::EconError;
use crate::panel::PanelError;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("block length {block} exceeds sample length {len}")]
    BlockTooLong { block: usize, len: usize },
    #[error("invalid bootstrap spec: {0}")]
    InvalidSpec(String),
    #[error("series lengths differ")]
    Misaligned,
    #[error("correlation draw {0} outside (-1, 1)")]
    DrawOutOfRange(f64),
    #[error("p-value {0} outside [0, 1]")]
    PvalOutOfRange(f64),
    #[error("{clusters} clusters; at least 2 are required")]
    TooFewClusters { clusters: usize },
    #[error("{firms} firms for {folds} folds")]
    TooFewFirms { firms: usize, folds: usize },
    #[error("empty bin or empty sample")]
    EmptyBin,
    #[error("hypothesis `{0}` is not estimable in its model")]
    NotEstimable(String),
    #[error(transparent)]
    Econ(#[from] EconError),
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    MovingBlock,
    Parametric,
    TimeBlock,
    WildCluster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub scheme: Scheme,
    #[serde(default = "default_block")]
    pub block_len: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_block() -> usize {
    12
}

fn default_level() -> f64 {
    0.95
}

impl BootstrapSpec {
    pub fn new(scheme: Scheme, block_len: usize, reps: usize, seed: u64) -> Self {
        Self { scheme, block_len, reps, seed, level: default_level() }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        if self.reps == 0 {
            return Err(InferenceError::InvalidSpec("reps must be at least 1".into()));
        }
        if self.block_len == 0 {
            return Err(InferenceError::InvalidSpec("block_len must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(InferenceError::InvalidSpec(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// A point estimate with a percentile interval. `boundary_flag` marks an
/// upper bound censored at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub boundary_flag: bool,
}

impl IntervalEstimate {
    /// Percentile interval of `draws` (sorted internally).
    pub fn percentile(point: f64, draws: &[f64], level: f64) -> Self {
        let mut d = draws.to_vec();
        d.sort_by(f64::total_cmp);
        let a = (1.0 - level) / 2.0;
        Self {
            point,
            lower: stats::quantile_sorted(&d, a),
            upper: stats::quantile_sorted(&d, 1.0 - a),
            level,
            boundary_flag: false,
        }
    }
}

/// A family of hypotheses with raw and adjusted p-values.
#[derive(Debug, Clone, Serialize)]
pub struct PvalFamily {
    pub family: String,
    pub labels: Vec<String>,
    pub horizons: Vec<usize>,
    /// Display coefficients (bps for shock terms).
    pub coefs: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub raw_p: Vec<f64>,
    pub p_holm: Vec<f64>,
    pub p_rw: Vec<f64>,
    /// Fewer than [`FEW_CLUSTERS`] month clusters.
    pub few_clusters: bool,
}

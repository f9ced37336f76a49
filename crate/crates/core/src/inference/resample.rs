use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use super::InferenceError;
use crate::month::Month;
use crate::panel::{FirmMonthPanel, PanelError};
use crate::rng::substream;
use crate::stats;

#[derive(Debug, Clone, Serialize)]
pub struct JackknifeResult {
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    /// Leave-one-fold-out estimates, one row per fold.
    pub leave_out: Vec<Vec<f64>>,
    /// Fold of each firm, indexed like the panel's firm dictionary.
    pub fold_of_firm: Vec<usize>,
}

/// Delete-a-group jackknife over firm folds.
///
/// Firms are shuffled with `seed` and dealt round-robin into `n_folds`
/// folds; `SE = sqrt((G-1)/G sum_g (theta_g - theta_bar)^2)`.
pub fn jackknife_se<F>(panel: &FirmMonthPanel, estimator: F, n_folds: usize, seed: u64) -> Result<JackknifeResult, InferenceError>
where
    F: Fn(&FirmMonthPanel) -> Result<Vec<f64>, PanelError> + Sync,
{
    let firms = panel.n_firms();
    if n_folds < 2 || firms < n_folds {
        return Err(InferenceError::TooFewFirms { firms, folds: n_folds });
    }
    let mut perm: Vec<usize> = (0..firms).collect();
    perm.shuffle(&mut substream(seed, 0));
    let mut fold_of_firm = vec![0; firms];
    for (pos, f) in perm.into_iter().enumerate() {
        fold_of_firm[f] = pos % n_folds;
    }
    let estimate = estimator(panel)?;
    let leave_out: Vec<Vec<f64>> = (0..n_folds)
        .into_par_iter()
        .map(|g| {
            let keep: Vec<usize> = (0..panel.len()).filter(|&r| fold_of_firm[panel.firm_index(r)] != g).collect();
            estimator(&panel.select(&keep, None)?)
        })
        .collect::<Result<_, PanelError>>()?;
    let gf = n_folds as f64;
    let se = (0..estimate.len())
        .map(|j| {
            let v: Vec<f64> = leave_out.iter().map(|r| r[j]).collect();
            let m = stats::mean(&v);
            ((gf - 1.0) / gf * v.iter().map(|x| (x - m).powi(2)).sum::<f64>()).sqrt()
        })
        .collect();
    Ok(JackknifeResult { estimate, se, leave_out, fold_of_firm })
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeBlockResult {
    pub estimate: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
}

/// Moving-block bootstrap over calendar months.
///
/// All rows of a sampled month move together. The `k`-th sampled month is
/// relabelled to the `k`-th month of the original calendar, so the
/// estimator sees a panel with the original month grid. Estimators should
/// read attached shock and outcome columns so that both travel with their
/// rows (see [`FirmMonthPanel::attach_shocks`] and
/// [`FirmMonthPanel::attach_forward_return`]).
pub fn time_block_bootstrap<F>(
    panel: &FirmMonthPanel,
    estimator: F,
    block_len: usize,
    reps: usize,
    seed: u64,
) -> Result<TimeBlockResult, InferenceError>
where
    F: Fn(&FirmMonthPanel) -> Result<Vec<f64>, PanelError> + Sync,
{
    let months = panel.distinct_months();
    let t = months.len();
    if block_len == 0 || reps == 0 {
        return Err(InferenceError::InvalidSpec("block_len and reps must be positive".into()));
    }
    if block_len > t {
        return Err(InferenceError::BlockTooLong { block: block_len, len: t });
    }
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); t];
    for r in 0..panel.len() {
        let k = months.binary_search(&panel.month(r)).expect("month present");
        rows_of[k].push(r);
    }
    let estimate = estimator(panel)?;
    let draws: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let mut picked = Vec::with_capacity(t + block_len);
            while picked.len() < t {
                let s = rng.random_range(0..=t - block_len);
                picked.extend(s..s + block_len);
            }
            picked.truncate(t);
            let mut keep = Vec::with_capacity(panel.len());
            let mut relabel: Vec<Month> = Vec::with_capacity(panel.len());
            for (k, &src) in picked.iter().enumerate() {
                for &r in &rows_of[src] {
                    keep.push(r);
                    relabel.push(months[k]);
                }
            }
            estimator(&panel.select(&keep, Some(&relabel))?)
        })
        .collect::<Result<_, PanelError>>()?;
    let k = estimate.len();
    let col = |j: usize| draws.iter().map(|d| d[j]).collect::<Vec<f64>>();
    let mean = (0..k).map(|j| stats::mean(&col(j))).collect();
    let sd = (0..k).map(|j| if reps > 1 { stats::sample_sd(&col(j)) } else { 0.0 }).collect();
    Ok(TimeBlockResult { estimate, mean, sd, draws })
}

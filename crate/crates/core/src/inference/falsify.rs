use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::InferenceError;
use crate::econometrics::{ols_hac, EconError, MIN_LP_OBS};
use crate::rng::substream;
use crate::series::{MonthlySeries, ShockSeries};
use crate::stats::normal_two_sided_p;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeadLagRow {
    pub horizon: usize,
    pub coef: f64,
    pub se: f64,
    pub p_value: f64,
    pub nobs: usize,
}

/// Reverse-timing test: the `h`-month return ending in month `t`,
/// `r_{t-h+1} + ... + r_t`, regressed on the next month's shock
/// `eps_{t+1}` with an intercept and HAC(h-1) errors.
pub fn lead_lag_test(shocks: &ShockSeries, returns: &MonthlySeries, horizons: &[usize]) -> Result<Vec<LeadLagRow>, InferenceError> {
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(EconError::InvalidHorizons.into());
    }
    let eps = shocks.values();
    let r = returns.values();
    horizons
        .iter()
        .map(|&h| {
            let mut y = Vec::new();
            let mut x = Vec::new();
            // t indexes months of the return series
            for t in (h - 1)..r.len() {
                let month = returns.month_at(t).offset(1);
                if let Some(e) = shocks.get(month) {
                    y.push(r[t + 1 - h..=t].iter().sum());
                    x.push(e);
                }
            }
            if eps.is_empty() || y.len() < MIN_LP_OBS {
                return Err(InferenceError::Econ(EconError::MisalignedIndex(format!(
                    "{} overlapping months at horizon {h}",
                    y.len()
                ))));
            }
            let design = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] });
            let fit = ols_hac(&y, &design, h - 1)?;
            Ok(LeadLagRow { horizon: h, coef: fit.coefficients[1], se: fit.se(1), p_value: normal_two_sided_p(fit.t_stat(1)), nobs: y.len() })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct PermutationResult {
    pub statistic: f64,
    pub null: Vec<f64>,
    pub p_value: f64,
}

/// Within-bin permutation test.
///
/// `x` is shuffled independently inside each bin (e.g. year-month) and the
/// statistic recomputed; `p` is the share of draws with `|stat*| >= |stat|`.
pub fn permutation_falsification<K, F>(x: &[f64], bins: &[K], statistic: F, reps: usize, seed: u64) -> Result<PermutationResult, InferenceError>
where
    K: Ord + Clone + Sync,
    F: Fn(&[f64]) -> f64 + Sync,
{
    if x.is_empty() {
        return Err(InferenceError::EmptyBin);
    }
    if x.len() != bins.len() {
        return Err(InferenceError::Misaligned);
    }
    if reps == 0 {
        return Err(InferenceError::InvalidSpec("reps must be at least 1".into()));
    }
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, k) in bins.iter().enumerate() {
        groups.entry(k.clone()).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let stat = statistic(x);
    let null: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let mut perm = x.to_vec();
            for g in &groups {
                let mut vals: Vec<f64> = g.iter().map(|&i| x[i]).collect();
                vals.shuffle(&mut rng);
                for (&i, v) in g.iter().zip(vals) {
                    perm[i] = v;
                }
            }
            statistic(&perm)
        })
        .collect();
    let hits = null.iter().filter(|s| s.abs() >= stat.abs()).count();
    Ok(PermutationResult { statistic: stat, p_value: hits as f64 / reps as f64, null })
}

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng as _;
use rayon::prelude::*;

use super::{InferenceError, PvalFamily};
use crate::econometrics::gram_inverse;
use crate::month::Month;
use crate::panel::FeDesign;
use crate::rng::substream;
use crate::stats::normal_two_sided_p;

/// Month-cluster count below which wild-bootstrap p-values are flagged.
pub const FEW_CLUSTERS: usize = 8;

/// Holm step-down adjustment: `min(1, p_(j) (m - j + 1))` over ascending
/// p-values, made monotone by a running maximum, returned in input order.
pub fn holm_adjust(raw_p: &[f64]) -> Result<Vec<f64>, InferenceError> {
    if let Some(bad) = raw_p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(InferenceError::PvalOutOfRange(*bad));
    }
    let m = raw_p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| raw_p[*a].total_cmp(&raw_p[*b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0f64;
    for (j, &i) in order.iter().enumerate() {
        running = running.max((raw_p[i] * (m - j) as f64).min(1.0));
        out[i] = running;
    }
    Ok(out)
}

/// One fixed-effects model and the coefficients tested in it.
#[derive(Debug, Clone)]
pub struct RwModel<'a> {
    pub design: &'a FeDesign,
    /// Term names as they appear in the design.
    pub tested: Vec<String>,
}

struct Prepared<'a> {
    design: &'a FeDesign,
    cols: Vec<usize>,
    /// Restricted-model fitted values on the within scale.
    fitted: Vec<f64>,
    /// Restricted-model residuals.
    resid: Vec<f64>,
    month_idx: Vec<usize>,
}

fn prepare<'a>(m: &RwModel<'a>, months: &BTreeMap<Month, usize>) -> Result<Prepared<'a>, InferenceError> {
    let d = m.design;
    let cols = m
        .tested
        .iter()
        .map(|t| d.term_index(t).ok_or_else(|| InferenceError::NotEstimable(t.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let keep: Vec<usize> = (0..d.x_within.ncols()).filter(|j| !cols.contains(j)).collect();
    let y = DVector::from_column_slice(&d.y_within);
    let fitted = if keep.is_empty() {
        DVector::zeros(y.len())
    } else {
        let xr = d.x_within.select_columns(&keep);
        let inv = gram_inverse(&xr.tr_mul(&xr))?;
        &xr * (inv * xr.tr_mul(&y))
    };
    let resid = &y - &fitted;
    Ok(Prepared {
        design: d,
        cols,
        fitted: fitted.iter().copied().collect(),
        resid: resid.iter().copied().collect(),
        month_idx: d.month.iter().map(|m| months[m]).collect(),
    })
}

/// Romano-Wolf step-down p-values from a wild cluster bootstrap.
///
/// Restricted-model residuals (tested coefficients set to zero) are flipped
/// by month-level Rademacher weights shared across all models in a draw;
/// each model is refitted and its clustered t-statistics recorded. The
/// adjusted p-value of the hypothesis ranked `j` by `|t|` is the share of
/// draws whose largest `|t*|` over ranks `>= j` reaches `|t_j|`, with a
/// running maximum for monotonicity. Holm adjustments of the analytic
/// p-values are reported alongside.
pub fn romano_wolf_stepdown(family: &str, models: &[RwModel<'_>], reps: usize, seed: u64) -> Result<PvalFamily, InferenceError> {
    if reps == 0 {
        return Err(InferenceError::InvalidSpec("reps must be at least 1".into()));
    }
    let mut months: BTreeMap<Month, usize> = BTreeMap::new();
    for m in models {
        for mo in &m.design.month {
            months.insert(*mo, 0);
        }
    }
    for (i, v) in months.values_mut().enumerate() {
        *v = i;
    }
    let n_clusters = months.len();
    if n_clusters < 2 {
        return Err(InferenceError::TooFewClusters { clusters: n_clusters });
    }
    let prepared = models.iter().map(|m| prepare(m, &months)).collect::<Result<Vec<_>, _>>()?;

    let mut labels = Vec::new();
    let mut horizons = Vec::new();
    let mut coefs = Vec::new();
    let mut t_obs = Vec::new();
    for (m, p) in models.iter().zip(&prepared) {
        let fit = p.design.fit()?;
        for (name, &c) in m.tested.iter().zip(&p.cols) {
            labels.push(name.clone());
            horizons.push(p.design.horizon);
            coefs.push(fit.coef_display(c));
            t_obs.push(fit.t_stat(c));
        }
    }
    let raw_p: Vec<f64> = t_obs.iter().map(|t| normal_two_sided_p(*t)).collect();
    let n_hyp = t_obs.len();

    let t_star: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let w: Vec<f64> = (0..n_clusters).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let mut out = Vec::with_capacity(n_hyp);
            for p in &prepared {
                let mut shock: Vec<f64> = p.resid.iter().zip(&p.month_idx).map(|(e, &g)| e * w[g]).collect();
                p.design.demean(&mut shock);
                let y: Vec<f64> = p.fitted.iter().zip(&shock).map(|(a, b)| a + b).collect();
                let fit = p.design.fit_outcome(&y)?;
                out.extend(p.cols.iter().map(|&c| fit.t_stat(c)));
            }
            Ok(out)
        })
        .collect::<Result<_, InferenceError>>()?;

    // Step-down over hypotheses ranked by |t|, largest first.
    let mut order: Vec<usize> = (0..n_hyp).collect();
    order.sort_by(|a, b| t_obs[*b].abs().total_cmp(&t_obs[*a].abs()));
    let mut p_rw = vec![0.0; n_hyp];
    let mut running = 0.0f64;
    for (rank, &j) in order.iter().enumerate() {
        let rest = &order[rank..];
        let hits = t_star
            .iter()
            .filter(|draw| rest.iter().map(|&k| draw[k].abs()).fold(f64::NEG_INFINITY, f64::max) >= t_obs[j].abs())
            .count();
        running = running.max(hits as f64 / reps as f64);
        p_rw[j] = running;
    }

    Ok(PvalFamily {
        family: family.to_string(),
        labels,
        horizons,
        coefs,
        t_stats: t_obs,
        p_holm: holm_adjust(&raw_p)?,
        raw_p,
        p_rw,
        few_clusters: n_clusters < FEW_CLUSTERS,
    })
}

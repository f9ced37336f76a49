//! Local-projection impulse responses.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ols::{gram_inverse, hac_long_run_cov, ols_hac};
use super::EconError;
use crate::series::{MonthlySeries, ShockSeries};

/// Smallest per-horizon regression sample accepted.
pub const MIN_LP_OBS: usize = 30;

/// Dependent variable of the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpMode {
    /// `r_{t+h}`.
    Level,
    /// `r_{t+1} + ... + r_{t+h}`.
    Cumulative,
}

/// How the cross-horizon covariance of the stacked coefficients is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossHorizonCov {
    /// Per-horizon HAC variances on the diagonal, zeros elsewhere.
    #[default]
    BlockDiagonal,
    /// Bartlett long-run covariance of the stacked influence functions with
    /// a common truncation `max(h) - 1`.
    Joint,
}

#[derive(Debug, Clone, Default)]
pub struct LpOptions<'a> {
    /// Extra regressors dated with the shock (lagged returns, dummies, ...).
    pub controls: &'a [MonthlySeries],
    pub covariance: CrossHorizonCov,
}

/// Horizon-indexed LP coefficients on the shock, in decimal return per
/// one-standard-deviation shock.
#[derive(Debug, Clone, PartialEq)]
pub struct IrfEstimate {
    pub horizons: Vec<usize>,
    pub betas: Vec<f64>,
    pub ses: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub nobs: Vec<usize>,
    pub mode: LpMode,
    pub shock_id: String,
}

impl IrfEstimate {
    /// An estimate assembled from given moments, e.g. for fitting published
    /// responses. `ses` are taken from the covariance diagonal.
    pub fn from_moments(
        horizons: Vec<usize>,
        betas: Vec<f64>,
        covariance: DMatrix<f64>,
        mode: LpMode,
    ) -> Result<Self, EconError> {
        let n = horizons.len();
        if betas.len() != n || covariance.shape() != (n, n) {
            return Err(EconError::DimensionMismatch { rows: n, len: betas.len() });
        }
        if horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EconError::InvalidHorizons);
        }
        let ses = (0..n).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
        Ok(Self { horizons, betas, ses, covariance, nobs: vec![0; n], mode, shock_id: String::new() })
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }
}

/// One regression per horizon of the `h`-ahead outcome on the shock (plus a
/// constant and optional controls). HAC truncation is `h - 1`.
///
/// Shock month `t` is paired with returns of months `t+1 ..= t+h`; shock
/// months without the full return window are dropped per horizon.
pub fn local_projection_irf(
    shocks: &ShockSeries,
    returns: &MonthlySeries,
    horizons: &[usize],
    mode: LpMode,
    opts: &LpOptions<'_>,
) -> Result<IrfEstimate, EconError> {
    if horizons.is_empty() || horizons.contains(&0) || horizons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EconError::InvalidHorizons);
    }
    let eps = shocks.values();
    let r = returns.values();
    let offset = shocks.start().since(returns.start());
    let kc = opts.controls.len();

    struct Horizon {
        months: Vec<usize>,
        infl: Vec<f64>,
        beta: f64,
        se: f64,
    }

    let mut per_h = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (i, &e) in eps.iter().enumerate() {
            // returns index of shock month i
            let base = i as i64 + offset;
            if base + 1 < 0 || base + h as i64 >= r.len() as i64 {
                continue;
            }
            let month = shocks.month_at(i);
            let mut ctrl = Vec::with_capacity(kc);
            for c in opts.controls {
                match c.get(month) {
                    Some(v) => ctrl.push(v),
                    None => return Err(EconError::MisalignedIndex(format!("control missing at {month}"))),
                }
            }
            // index of month t+1
            let b = (base + 1) as usize;
            let dep = match mode {
                LpMode::Level => r[b + h - 1],
                LpMode::Cumulative => r[b..b + h].iter().sum(),
            };
            rows.push((i, e, ctrl));
            y.push(dep);
        }
        if rows.len() < MIN_LP_OBS.max(kc + 3) {
            if rows.is_empty() && h == horizons[0] {
                return Err(EconError::MisalignedIndex(format!(
                    "shocks {}.. and returns {}.. do not overlap",
                    shocks.start(),
                    returns.start()
                )));
            }
            return Err(EconError::InsufficientOverlap { horizon: h, nobs: rows.len(), min: MIN_LP_OBS });
        }
        let n = rows.len();
        let x = DMatrix::from_fn(n, 2 + kc, |t, j| match j {
            0 => 1.0,
            1 => rows[t].1,
            _ => rows[t].2[j - 2],
        });
        let reg = ols_hac(&y, &x, h - 1)?;
        // influence function of the shock coefficient
        let inv = gram_inverse(&x.tr_mul(&x))?;
        let infl = (0..n)
            .map(|t| {
                let xi = x.row(t);
                let w: f64 = (0..2 + kc).map(|j| inv[(1, j)] * xi[j]).sum();
                w * reg.residuals[t]
            })
            .collect();
        per_h.push(Horizon {
            months: rows.iter().map(|r| r.0).collect(),
            infl,
            beta: reg.coefficients[1],
            se: reg.se(1),
        });
    }

    let k = horizons.len();
    let covariance = match opts.covariance {
        CrossHorizonCov::BlockDiagonal => DMatrix::from_fn(k, k, |i, j| if i == j { per_h[i].se.powi(2) } else { 0.0 }),
        CrossHorizonCov::Joint => {
            let first = per_h.iter().filter_map(|p| p.months.first()).min().copied().unwrap_or(0);
            let last = per_h.iter().filter_map(|p| p.months.last()).max().copied().unwrap_or(0);
            let span = last - first + 1;
            let mut scores = DMatrix::zeros(span, k);
            for (j, p) in per_h.iter().enumerate() {
                for (m, v) in p.months.iter().zip(&p.infl) {
                    scores[(m - first, j)] = *v;
                }
            }
            let lag = horizons.iter().max().copied().unwrap_or(1) - 1;
            hac_long_run_cov(&scores, lag)
        }
    };

    Ok(IrfEstimate {
        horizons: horizons.to_vec(),
        betas: per_h.iter().map(|p| p.beta).collect(),
        ses: per_h.iter().map(|p| p.se).collect(),
        covariance,
        nobs: per_h.iter().map(|p| p.months.len()).collect(),
        mode,
        shock_id: String::new(),
    })
}

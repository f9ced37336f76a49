//! Month-indexed series, AR(1) shock extraction, cumulative returns and
//! sign splitting.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::econometrics::{hac_long_run_cov, ols_hac};
use crate::month::Month;
use crate::stats;

/// Newey-West truncation used for the AR(1) standard errors.
pub const AR1_HAC_LAG: usize = 12;
/// Shortest series accepted by [`estimate_ar1`].
pub const AR1_MIN_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("series must contain at least one value")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("gap in monthly index: expected {expected}, found {found}")]
    Gap { expected: Month, found: Month },
    #[error("series too short: {len} values, need at least {min}")]
    SeriesTooShort { len: usize, min: usize },
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("horizon {horizon} too long for a series of length {len}")]
    HorizonTooLong { horizon: usize, len: usize },
}

/// A contiguous run of monthly observations.
#[derive(Debug, Clone, PartialEq)]
pub struct MonthlySeries {
    start: Month,
    values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(start: Month, values: Vec<f64>) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite(i));
        }
        Ok(Self { start, values })
    }

    /// Builds a series from `(month, value)` pairs, which must be strictly
    /// consecutive. Missing months are an error, never imputed.
    pub fn from_pairs(pairs: &[(Month, f64)]) -> Result<Self, SeriesError> {
        let (first, _) = *pairs.first().ok_or(SeriesError::Empty)?;
        for (i, (m, _)) in pairs.iter().enumerate() {
            let expected = first.offset(i as i64);
            if *m != expected {
                return Err(SeriesError::Gap { expected, found: *m });
            }
        }
        Self::new(first, pairs.iter().map(|p| p.1).collect())
    }

    pub fn start(&self) -> Month {
        self.start
    }

    /// Month of the last observation.
    pub fn end(&self) -> Month {
        self.start.offset(self.values.len() as i64 - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn month_at(&self, index: usize) -> Month {
        self.start.offset(index as i64)
    }

    pub fn get(&self, month: Month) -> Option<f64> {
        let k = month.since(self.start);
        if k < 0 {
            return None;
        }
        self.values.get(k as usize).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Month, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (self.start.offset(i as i64), *v))
    }

    /// Sub-series covering `[from, to]` (inclusive), clipped to the data.
    pub fn slice(&self, from: Month, to: Month) -> Option<Self> {
        let lo = from.max(self.start);
        let hi = to.min(self.end());
        if hi < lo {
            return None;
        }
        let a = lo.since(self.start) as usize;
        let b = hi.since(self.start) as usize;
        Some(Self { start: lo, values: self.values[a..=b].to_vec() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, SeriesError> {
        Self::new(self.start, self.values.iter().map(|v| f(*v)).collect())
    }
}

/// AR(1) fit `S_t = alpha + phi S_{t-1} + u_t` with Newey-West(12) errors.
#[derive(Debug, Clone)]
pub struct Ar1Fit {
    pub alpha: f64,
    pub phi: f64,
    pub sigma_u: f64,
    pub residuals: MonthlySeries,
    pub se_alpha: f64,
    pub se_phi: f64,
    pub se_sigma: f64,
    /// Sample mean removed before estimation.
    pub demeaned_by: f64,
}

/// Standardised innovations on a one-standard-deviation scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockSeries {
    start: Month,
    eps: Vec<f64>,
    flipped: bool,
}

impl ShockSeries {
    /// Wraps already-standardised values without rescaling them.
    pub fn from_values(start: Month, eps: Vec<f64>) -> Result<Self, SeriesError> {
        let s = MonthlySeries::new(start, eps)?;
        Ok(Self { start: s.start, eps: s.values, flipped: false })
    }

    /// Standardises arbitrary values to unit sample variance.
    pub fn standardize(series: &MonthlySeries) -> Result<Self, SeriesError> {
        let v = series.values();
        if v.len() < 2 {
            return Err(SeriesError::SeriesTooShort { len: v.len(), min: 2 });
        }
        let sd = stats::sample_sd(v);
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(SeriesError::DegenerateSeries);
        }
        Ok(Self {
            start: series.start(),
            eps: v.iter().map(|x| x / sd).collect(),
            flipped: false,
        })
    }

    pub fn start(&self) -> Month {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.eps
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn is_flipped(&self) -> bool {
        self.flipped
    }

    pub fn month_at(&self, index: usize) -> Month {
        self.start.offset(index as i64)
    }

    pub fn get(&self, month: Month) -> Option<f64> {
        let k = month.since(self.start);
        if k < 0 {
            return None;
        }
        self.eps.get(k as usize).copied()
    }

    /// Reverses the sign convention and toggles the flag.
    pub fn flipped(&self) -> Self {
        Self {
            start: self.start,
            eps: self.eps.iter().map(|e| -e).collect(),
            flipped: !self.flipped,
        }
    }

    pub fn as_series(&self) -> MonthlySeries {
        MonthlySeries { start: self.start, values: self.eps.clone() }
    }

    pub fn slice(&self, from: Month, to: Month) -> Option<Self> {
        let s = self.as_series().slice(from, to)?;
        Some(Self { start: s.start, eps: s.values, flipped: self.flipped })
    }
}

/// Estimates the AR(1) law of motion of a (sentiment) series.
///
/// The series is demeaned first; the intercept is still estimated and
/// reported. `sigma_u` uses the `n - 2` degrees-of-freedom correction.
pub fn estimate_ar1(series: &MonthlySeries) -> Result<Ar1Fit, SeriesError> {
    let v = series.values();
    if v.len() < AR1_MIN_LEN {
        return Err(SeriesError::SeriesTooShort { len: v.len(), min: AR1_MIN_LEN });
    }
    let m = stats::mean(v);
    let var = stats::sample_variance(v);
    if !(var > f64::EPSILON * m.abs().max(1.0).powi(2)) {
        return Err(SeriesError::DegenerateSeries);
    }
    let d: Vec<f64> = v.iter().map(|x| x - m).collect();
    let n = d.len() - 1;
    let y = d[1..].to_vec();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { d[i] });
    let reg = ols_hac(&y, &x, AR1_HAC_LAG).map_err(|_| SeriesError::DegenerateSeries)?;

    let u = reg.residuals.clone();
    let ssr: f64 = u.iter().map(|e| e * e).sum();
    let sigma_u = (ssr / (n as f64 - 2.0)).sqrt();

    // Delta method on sigma = sqrt(E[u^2]) with a HAC variance of the mean of u^2.
    let s2 = ssr / n as f64;
    let scores = DMatrix::from_fn(n, 1, |i, _| u[i] * u[i] - s2);
    let lr = hac_long_run_cov(&scores, AR1_HAC_LAG)[(0, 0)];
    let se_sigma = (lr / n as f64).sqrt() / (2.0 * s2.sqrt());

    Ok(Ar1Fit {
        alpha: reg.coefficients[0],
        phi: reg.coefficients[1],
        sigma_u,
        residuals: MonthlySeries::new(series.start().offset(1), u)?,
        se_alpha: reg.se(0),
        se_phi: reg.se(1),
        se_sigma,
        demeaned_by: m,
    })
}

/// Residuals divided by their sample standard deviation (denominator n-1),
/// so the result has unit sample variance.
pub fn standardize_shocks(fit: &Ar1Fit) -> Result<ShockSeries, SeriesError> {
    ShockSeries::standardize(&fit.residuals)
}

/// `R_{t -> t+h}`: the sum of the `h` returns strictly after `t`. The output
/// keeps the input's start month and has `len - h` values.
pub fn cumulative_returns(returns: &MonthlySeries, h: usize) -> Result<MonthlySeries, SeriesError> {
    let r = returns.values();
    if h == 0 || r.len() <= h {
        return Err(SeriesError::HorizonTooLong { horizon: h, len: r.len() });
    }
    let out = (0..r.len() - h).map(|t| r[t + 1..=t + h].iter().sum()).collect();
    MonthlySeries::new(returns.start(), out)
}

/// Pointwise `(max(e, 0), min(e, 0))`. One of the two parts is always an
/// exact zero, so their sum reproduces the input bit for bit.
pub fn split_sign(shocks: &ShockSeries) -> (Vec<f64>, Vec<f64>) {
    shocks
        .values()
        .iter()
        .map(|&e| if e > 0.0 { (e, 0.0) } else { (0.0, e) })
        .unzip()
}

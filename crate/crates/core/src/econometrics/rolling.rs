//! Rolling-window geometric fits.

use rayon::prelude::*;

use super::geometric::{fit_geometric, FitMethod, GeometricFit};
use super::lp::{local_projection_irf, LpMode, LpOptions};
use super::EconError;
use crate::month::Month;
use crate::series::{MonthlySeries, ShockSeries};
use crate::structural::IrfConvention;

#[derive(Debug, Clone)]
pub struct RollingSpec {
    pub window: usize,
    pub step: usize,
    pub horizons: Vec<usize>,
    pub mode: LpMode,
    pub method: FitMethod,
    pub convention: IrfConvention,
}

impl Default for RollingSpec {
    fn default() -> Self {
        Self {
            window: 60,
            step: 1,
            horizons: vec![1, 3, 6, 12],
            mode: LpMode::Level,
            method: FitMethod::Gmm,
            convention: IrfConvention::LevelHMinus1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RollingPoint {
    /// First shock month in the window.
    pub start: Month,
    pub fit: GeometricFit,
}

/// Number of windows for `len` aligned months: `floor((len - window - max_h) / step) + 1`.
pub fn rolling_window_count(len: usize, window: usize, max_h: usize, step: usize) -> Option<usize> {
    let need = window + max_h;
    if len < need || step == 0 {
        return None;
    }
    Some((len - need) / step + 1)
}

/// Fits the geometric response on each `window`-month block of shocks,
/// advancing by `step`. A window's returns extend `max(h)` months past its
/// last shock. For shocks and returns on a common `T`-month index this gives
/// `T - window - max(h) + 1` windows at unit step.
///
/// Windows are estimated in parallel; the output is ordered by start month.
pub fn rolling_fit(
    shocks: &ShockSeries,
    returns: &MonthlySeries,
    spec: &RollingSpec,
) -> Result<Vec<RollingPoint>, EconError> {
    let max_h = spec.horizons.iter().copied().max().ok_or(EconError::InvalidHorizons)?;
    // shock month t needs returns t+1 ..= t+max_h
    let first = shocks.start().max(returns.start().offset(-1));
    let last_usable = shocks.month_at(shocks.len() - 1).min(returns.end().offset(-(max_h as i64)));
    let usable = if last_usable >= first { (last_usable.since(first) + 1) as usize } else { 0 };
    let len = usable + max_h;
    let count = rolling_window_count(len, spec.window, max_h, spec.step)
        .ok_or(EconError::WindowTooLong { window: spec.window, len, max_h })?;

    (0..count)
        .into_par_iter()
        .map(|i| {
            let s = first.offset((i * spec.step) as i64);
            let e = s.offset(spec.window as i64 - 1);
            let sh = shocks.slice(s, e).ok_or(EconError::InvalidHorizons)?;
            let re = returns.slice(s.offset(1), e.offset(max_h as i64)).ok_or(EconError::InvalidHorizons)?;
            let irf = local_projection_irf(&sh, &re, &spec.horizons, spec.mode, &LpOptions::default())?;
            let fit = fit_geometric(&irf, spec.method, spec.convention)?;
            Ok(RollingPoint { start: s, fit })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use crate::structural::{simulate_feedback, FeedbackParams};

    #[test]
    fn window_counts() {
        assert_eq!(rolling_window_count(420, 60, 12, 12), Some(30));
        assert_eq!(rolling_window_count(420, 408, 12, 1), Some(1));
        assert_eq!(rolling_window_count(100, 95, 12, 1), None);
    }

    fn aligned(t: usize, seed: u64) -> (ShockSeries, MonthlySeries) {
        let start: Month = "1900-01".parse().unwrap();
        let p = FeedbackParams { kappa_bps: 1.06, rho: 0.94 };
        let path = simulate_feedback(p, t, seed, 0, start).unwrap();
        let shocks = ShockSeries::from_values(start, path.innovations.values().to_vec()).unwrap();
        (shocks, path.returns)
    }

    #[test]
    fn count_and_order() {
        let (shocks, returns) = aligned(420, 3);
        // shocks cover months 0..=419 and returns 1..=420: 409 shock months
        // are usable at max h = 12, a common index of T = 421
        let spec = RollingSpec { step: 12, ..Default::default() };
        let pts = rolling_fit(&shocks, &returns, &spec).unwrap();
        assert_eq!(pts.len(), 30);
        assert!(pts.windows(2).all(|w| w[0].start < w[1].start));
        let one = RollingSpec { window: 421 - 12, ..Default::default() };
        assert_eq!(rolling_fit(&shocks, &returns, &one).unwrap().len(), 1);
        let too_long = RollingSpec { window: 410, ..Default::default() };
        assert!(matches!(rolling_fit(&shocks, &returns, &too_long), Err(EconError::WindowTooLong { .. })));
    }

    #[test]
    fn constant_parameters_are_recovered_on_median() {
        let (shocks, returns) = aligned(1000, 21);
        let spec = RollingSpec { method: FitMethod::Wls, ..Default::default() };
        let pts = rolling_fit(&shocks, &returns, &spec).unwrap();
        let k: Vec<f64> = pts.iter().map(|p| p.fit.kappa_bps).collect();
        let r: Vec<f64> = pts.iter().map(|p| p.fit.rho).collect();
        let (mk, mr) = (stats::median(&k), stats::median(&r));
        assert!((mk / 1.06 - 1.0).abs() < 0.30, "kappa {mk}");
        assert!((mr - 0.94).abs() < 0.05, "rho {mr}");
    }
}

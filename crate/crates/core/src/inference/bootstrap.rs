use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{BootstrapSpec, InferenceError, IntervalEstimate};
use crate::econometrics::{fit_geometric, FitFlag, FitMethod, IrfEstimate, RHO_UPPER};
use crate::rng::{substream, Rng};
use crate::structural::{half_life, IrfConvention, UNIT_ROOT_TOL};

/// Indices of one moving-block resample of a length-`n` sample: overlapping
/// blocks with uniform starts in `0..=n-block`, concatenated and cut at `n`.
pub fn moving_block_indices(n: usize, block: usize, rng: &mut Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n + block);
    while out.len() < n {
        let s = rng.random_range(0..=n - block);
        out.extend(s..s + block);
    }
    out.truncate(n);
    out
}

/// Moving-block bootstrap of `statistic` over aligned columns.
///
/// All columns are resampled with the same block indices. Returns the
/// percentile interval around the full-sample statistic plus the draws in
/// replication order.
pub fn moving_block_bootstrap<F>(
    data: &[&[f64]],
    statistic: F,
    spec: &BootstrapSpec,
) -> Result<(IntervalEstimate, Vec<f64>), InferenceError>
where
    F: Fn(&[Vec<f64>]) -> f64 + Sync,
{
    spec.validate()?;
    let n = data.first().map_or(0, |c| c.len());
    if data.iter().any(|c| c.len() != n) {
        return Err(InferenceError::Misaligned);
    }
    if n == 0 || spec.block_len > n {
        return Err(InferenceError::BlockTooLong { block: spec.block_len, len: n });
    }
    let original: Vec<Vec<f64>> = data.iter().map(|c| c.to_vec()).collect();
    let point = statistic(&original);
    let draws: Vec<f64> = (0..spec.reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(spec.seed, b as u64);
            let idx = moving_block_indices(n, spec.block_len, &mut rng);
            let cols: Vec<Vec<f64>> = data.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect();
            statistic(&cols)
        })
        .collect();
    Ok((IntervalEstimate::percentile(point, &draws, spec.level), draws))
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametricBootstrap {
    pub kappa_bps: IntervalEstimate,
    /// Draws whose fit sits on the upper edge of the `rho` search box are
    /// counted as a unit root (`rho = 1`) here.
    pub rho: IntervalEstimate,
    pub half_life: IntervalEstimate,
    pub kappa_draws: Vec<f64>,
    /// Fitted `rho` per draw, before unit-root recoding.
    pub rho_draws: Vec<f64>,
    /// Covariance had negative eigenvalues that were clipped to zero.
    pub psd_repaired: bool,
}

/// Draws `beta ~ N(beta_hat, Sigma_hat)`, refits the geometric model on each
/// draw and reports percentile intervals.
///
/// The half-life upper bound is censored at infinity whenever the upper
/// percentile of the (recoded) `rho` draws reaches `1 - 1e-9`.
pub fn parametric_irf_bootstrap(
    irf: &IrfEstimate,
    method: FitMethod,
    convention: IrfConvention,
    spec: &BootstrapSpec,
) -> Result<ParametricBootstrap, InferenceError> {
    spec.validate()?;
    let k = irf.betas.len();
    let sym = (&irf.covariance + irf.covariance.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let psd_repaired = eig.eigenvalues.iter().any(|l| *l < 0.0);
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let center = fit_geometric(irf, method, convention)?;
    let beta_hat = DVector::from_column_slice(&irf.betas);

    let fits: Vec<(f64, f64, bool)> = (0..spec.reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(spec.seed, b as u64);
            let z = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut rng));
            let draw = &beta_hat + &root * z;
            let mut e = irf.clone();
            e.betas = draw.iter().copied().collect();
            let f = fit_geometric(&e, method, convention)?;
            let at_edge = f.has_flag(FitFlag::Boundary) && f.rho >= RHO_UPPER - 1e-9;
            Ok((f.kappa_bps, f.rho, at_edge))
        })
        .collect::<Result<_, InferenceError>>()?;

    let kappa_draws: Vec<f64> = fits.iter().map(|f| f.0).collect();
    let rho_draws: Vec<f64> = fits.iter().map(|f| f.1).collect();
    let rho_eff: Vec<f64> = fits.iter().map(|f| if f.2 { 1.0 } else { f.1 }).collect();
    let hl_draws: Vec<f64> = rho_eff.iter().map(|r| half_life(*r).unwrap_or(f64::NAN)).collect();

    let kappa = IntervalEstimate::percentile(center.kappa_bps, &kappa_draws, spec.level);
    let mut rho = IntervalEstimate::percentile(center.rho, &rho_eff, spec.level);
    let mut hl = IntervalEstimate::percentile(center.half_life, &hl_draws, spec.level);
    if rho.upper >= 1.0 - UNIT_ROOT_TOL {
        rho.boundary_flag = true;
        hl.upper = f64::INFINITY;
        hl.boundary_flag = true;
    }
    Ok(ParametricBootstrap { kappa_bps: kappa, rho, half_life: hl, kappa_draws, rho_draws, psd_repaired })
}

/// `atanh(rho) = 0.5 ln((1 + rho) / (1 - rho))`.
pub fn fisher_z(rho: f64) -> f64 {
    rho.atanh()
}

/// Largest double below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Percentile interval for a persistence parameter computed on the Fisher-z
/// scale, mapped back with `tanh` and kept inside the open unit interval.
pub fn fisher_z_ci(point: f64, rho_draws: &[f64], level: f64) -> Result<IntervalEstimate, InferenceError> {
    if let Some(bad) = rho_draws.iter().find(|r| !(r.abs() < 1.0)) {
        return Err(InferenceError::DrawOutOfRange(*bad));
    }
    if rho_draws.is_empty() || !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::InvalidSpec("need draws and a level in (0, 1)".into()));
    }
    let z: Vec<f64> = rho_draws.iter().map(|r| fisher_z(*r)).collect();
    let zi = IntervalEstimate::percentile(fisher_z(point), &z, level);
    let clamp = |r: f64| r.clamp(f64::MIN_POSITIVE, BELOW_ONE);
    Ok(IntervalEstimate {
        point,
        lower: clamp(zi.lower.tanh()),
        upper: clamp(zi.upper.tanh()),
        level,
        boundary_flag: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econometrics::LpMode;
    use crate::inference::Scheme;
    use crate::stats;
    use crate::structural::irf_shape;

    fn spec(block: usize, reps: usize, seed: u64) -> BootstrapSpec {
        BootstrapSpec::new(Scheme::MovingBlock, block, reps, seed)
    }

    #[test]
    fn block_indices_are_contiguous_runs() {
        let mut rng = substream(3, 0);
        let idx = moving_block_indices(50, 12, &mut rng);
        assert_eq!(idx.len(), 50);
        for chunk in idx.chunks(12) {
            assert!(chunk.windows(2).all(|w| w[1] == w[0] + 1));
            assert!(*chunk.last().unwrap() < 50);
        }
    }

    #[test]
    fn block_too_long() {
        let x = vec![1.0; 5];
        let r = moving_block_bootstrap(&[&x], |c| stats::mean(&c[0]), &spec(6, 10, 0));
        assert_eq!(r.unwrap_err(), InferenceError::BlockTooLong { block: 6, len: 5 });
    }

    #[test]
    fn deterministic_and_thread_invariant() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = || moving_block_bootstrap(&[&x], |c| stats::mean(&c[0]), &spec(12, 200, 9)).unwrap().1;
        let a = run();
        let b = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
        assert_eq!(a, b);
    }

    #[test]
    fn unit_blocks_match_iid_bootstrap_spread() {
        let mut rng = substream(11, 0);
        let x: Vec<f64> = (0..400).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (_, draws) = moving_block_bootstrap(&[&x], |c| stats::mean(&c[0]), &spec(1, 2000, 1)).unwrap();
        let expected = stats::sample_sd(&x) / (x.len() as f64).sqrt();
        assert!((stats::sample_sd(&draws) / expected - 1.0).abs() < 0.08);
    }

    fn noiseless(kappa: f64, rho: f64, scale: f64) -> IrfEstimate {
        let h = vec![1, 3, 6, 12];
        let betas = h.iter().map(|&h| kappa / 1e4 * irf_shape(h, rho, IrfConvention::LevelHMinus1)).collect();
        let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { (scale * 1e-5).powi(2) } else { 0.0 });
        IrfEstimate::from_moments(h, betas, cov, LpMode::Level).unwrap()
    }

    #[test]
    fn zero_covariance_is_degenerate() {
        let mut irf = noiseless(1.06, 0.94, 1.0);
        irf.covariance = DMatrix::zeros(4, 4);
        let s = BootstrapSpec::new(Scheme::Parametric, 1, 50, 2);
        let pb = parametric_irf_bootstrap(&irf, FitMethod::Wls, IrfConvention::LevelHMinus1, &s).unwrap();
        assert!(pb.kappa_draws.iter().all(|k| *k == pb.kappa_bps.point));
        assert_eq!(pb.kappa_bps.lower, pb.kappa_bps.upper);
        assert_eq!(pb.rho.lower, pb.rho.point);
        assert!(!pb.half_life.boundary_flag);
    }

    #[test]
    fn interval_width_scales_with_noise() {
        let s = BootstrapSpec::new(Scheme::Parametric, 1, 400, 5);
        let width = |scale| {
            let pb = parametric_irf_bootstrap(&noiseless(1.06, 0.6, scale), FitMethod::Gmm, IrfConvention::LevelHMinus1, &s).unwrap();
            pb.kappa_bps.upper - pb.kappa_bps.lower
        };
        let ratio = width(2e-3) / width(1e-3);
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn unit_root_draws_censor_half_life() {
        let s = BootstrapSpec::new(Scheme::Parametric, 1, 300, 4);
        let pb = parametric_irf_bootstrap(&noiseless(1.06, 0.995, 10.0), FitMethod::Wls, IrfConvention::LevelHMinus1, &s).unwrap();
        assert!(pb.rho.upper >= 1.0 - UNIT_ROOT_TOL);
        assert!(pb.half_life.boundary_flag && pb.half_life.upper.is_infinite());
        let pb = parametric_irf_bootstrap(&noiseless(1.06, 0.5, 0.1), FitMethod::Wls, IrfConvention::LevelHMinus1, &s).unwrap();
        assert!(!pb.half_life.boundary_flag && pb.half_life.upper.is_finite());
    }

    #[test]
    fn indefinite_covariance_is_repaired() {
        let mut irf = noiseless(1.06, 0.9, 1.0);
        irf.covariance[(0, 1)] = 1e-9;
        irf.covariance[(1, 0)] = 1e-9;
        let s = BootstrapSpec::new(Scheme::Parametric, 1, 20, 4);
        assert!(parametric_irf_bootstrap(&irf, FitMethod::Wls, IrfConvention::LevelHMinus1, &s).unwrap().psd_repaired);
    }

    #[test]
    fn fisher_z_values() {
        assert_eq!(fisher_z(0.0), 0.0);
        assert!((fisher_z(0.94) - 1.738).abs() < 1e-3);
        for i in 1..=99 {
            let r = i as f64 / 100.0;
            assert!((fisher_z(r).tanh() - r).abs() < 1e-12);
        }
        let ci = fisher_z_ci(0.99, &[0.9, 0.99, 0.999999999999, -0.5], 0.95).unwrap();
        assert!(ci.lower > 0.0 && ci.upper < 1.0 && ci.lower <= ci.upper);
        assert_eq!(fisher_z_ci(0.5, &[0.5, 1.0], 0.9).unwrap_err(), InferenceError::DrawOutOfRange(1.0));
    }
}

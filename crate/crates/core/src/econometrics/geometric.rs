//! Fitting the two-parameter geometric response `kappa * shape(h; rho)` to a
//! vector of LP coefficients.
//!
//! All three objectives are weighted least squares in the moment vector
//! `beta - kappa * g(rho)`, so kappa is profiled out in closed form and the
//! remaining one-dimensional problem in rho is solved by a 512-point grid
//! followed by golden-section refinement and a Gauss-Newton polish.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use super::lp::IrfEstimate;
use super::EconError;
use crate::structural::{half_life, irf_shape, irf_shape_drho, wald_pair, Estimate, IrfConvention, WaldTest, BPS};
use crate::structural::StructuralError;

pub const RHO_LOWER: f64 = 0.001;
pub const RHO_UPPER: f64 = 0.999;
const GRID_POINTS: usize = 512;
/// Condition number above which the GMM weight falls back to diagonal.
pub const GMM_MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    /// Weight by the inverse of the full covariance of the coefficients.
    Gmm,
    /// Weight by inverse variances.
    Wls,
    /// Unweighted least squares with `kappa >= 0`.
    NlsConstrained,
}

impl FitMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FitMethod::Gmm => "gmm",
            FitMethod::Wls => "wls",
            FitMethod::NlsConstrained => "nls-constrained",
        }
    }
}

impl std::str::FromStr for FitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gmm" => Ok(Self::Gmm),
            "wls" => Ok(Self::Wls),
            "nls-constrained" => Ok(Self::NlsConstrained),
            other => Err(format!("unknown fit method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitFlag {
    /// GMM weight was ill-conditioned; diagonal weights were used instead.
    DiagonalFallback,
    /// Variances were unusable as weights; identity weights were used.
    IdentityFallback,
    /// The optimum sits on the boundary of the admissible box.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeometricFit {
    pub kappa_bps: f64,
    pub rho: f64,
    pub half_life: f64,
    /// J-statistic for GMM, weighted SSE otherwise.
    pub objective: f64,
    pub dof: usize,
    /// `1 - SSE/SST` on the coefficient vector, unweighted.
    pub r_squared: f64,
    pub method: FitMethod,
    pub convention: IrfConvention,
    pub kappa_se_bps: Option<f64>,
    pub rho_se: Option<f64>,
    pub flags: Vec<FitFlag>,
}

impl GeometricFit {
    pub fn has_flag(&self, flag: FitFlag) -> bool {
        self.flags.contains(&flag)
    }

    /// Model-implied response at `h`, in bps.
    pub fn implied_bps(&self, h: usize) -> f64 {
        self.kappa_bps * irf_shape(h, self.rho, self.convention)
    }
}

fn weight_matrix(irf: &IrfEstimate, method: FitMethod, flags: &mut Vec<FitFlag>) -> DMatrix<f64> {
    let n = irf.betas.len();
    let identity = DMatrix::identity(n, n);
    let diagonal = |flags: &mut Vec<FitFlag>| {
        let v: Vec<f64> = (0..n).map(|i| irf.covariance[(i, i)]).collect();
        if v.iter().all(|x| *x > 0.0 && x.is_finite()) {
            DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / v[i] } else { 0.0 })
        } else {
            flags.push(FitFlag::IdentityFallback);
            identity.clone()
        }
    };
    match method {
        FitMethod::NlsConstrained => identity.clone(),
        FitMethod::Wls => diagonal(flags),
        FitMethod::Gmm => {
            let sym = (&irf.covariance + irf.covariance.transpose()) * 0.5;
            let eig = SymmetricEigen::new(sym.clone());
            let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
            if lo > 0.0 && hi / lo <= GMM_MAX_CONDITION {
                if let Some(inv) = sym.cholesky().map(|c| c.inverse()) {
                    return inv;
                }
            }
            flags.push(FitFlag::DiagonalFallback);
            diagonal(flags)
        }
    }
}

struct Problem<'a> {
    beta: DVector<f64>,
    w: DMatrix<f64>,
    horizons: &'a [usize],
    convention: IrfConvention,
    nonneg_kappa: bool,
}

impl Problem<'_> {
    fn shape(&self, rho: f64) -> DVector<f64> {
        DVector::from_iterator(self.horizons.len(), self.horizons.iter().map(|&h| irf_shape(h, rho, self.convention)))
    }

    fn dshape(&self, rho: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.horizons.len(),
            self.horizons.iter().map(|&h| irf_shape_drho(h, rho, self.convention)),
        )
    }

    fn objective(&self, kappa: f64, rho: f64) -> f64 {
        let m = &self.beta - self.shape(rho) * kappa;
        (m.transpose() * &self.w * &m)[(0, 0)]
    }

    /// Optimal kappa for fixed rho.
    fn profile_kappa(&self, rho: f64) -> f64 {
        let g = self.shape(rho);
        let wg = &self.w * &g;
        let den = g.dot(&wg);
        let k = if den > 0.0 { wg.dot(&self.beta) / den } else { 0.0 };
        if self.nonneg_kappa {
            k.max(0.0)
        } else {
            k
        }
    }

    fn profile(&self, rho: f64) -> f64 {
        self.objective(self.profile_kappa(rho), rho)
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-15 {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        c
    } else {
        d
    }
}

/// Fits `beta_h ~ kappa * shape(h; rho)` by the chosen method and convention.
///
/// Kappa is returned in bps per one-s.d. shock (the coefficients are decimal
/// returns). Standard errors come from the sandwich
/// `(G'WG)^-1 G'W Sigma W G (G'WG)^-1`, which reduces to `(G'Sigma^-1 G)^-1`
/// for GMM.
pub fn fit_geometric(irf: &IrfEstimate, method: FitMethod, convention: IrfConvention) -> Result<GeometricFit, EconError> {
    let n = irf.betas.len();
    if n < 3 {
        return Err(EconError::TooFewHorizons(n));
    }
    if convention == IrfConvention::LevelHMinus1 && irf.horizons.contains(&0) {
        return Err(EconError::InvalidHorizons);
    }
    let mut flags = Vec::new();
    let w = weight_matrix(irf, method, &mut flags);
    let problem = Problem {
        beta: DVector::from_column_slice(&irf.betas),
        w,
        horizons: &irf.horizons,
        convention,
        nonneg_kappa: method == FitMethod::NlsConstrained,
    };

    let step = (RHO_UPPER - RHO_LOWER) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| RHO_LOWER + step * i as f64).collect();
    let best = grid
        .iter()
        .enumerate()
        .map(|(i, r)| (i, problem.profile(*r)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(GRID_POINTS - 1)];
    let mut rho = golden_section(|r| problem.profile(r), lo, hi);
    let mut kappa = problem.profile_kappa(rho);
    let mut obj = problem.objective(kappa, rho);

    // Gauss-Newton polish on (kappa, rho), kept only when it improves.
    for _ in 0..50 {
        let g = problem.shape(rho);
        let dg = problem.dshape(rho) * kappa;
        let resid = &problem.beta - &g * kappa;
        let jt_w_j = Matrix2::new(
            g.dot(&(&problem.w * &g)),
            g.dot(&(&problem.w * &dg)),
            dg.dot(&(&problem.w * &g)),
            dg.dot(&(&problem.w * &dg)),
        );
        let jt_w_r = Vector2::new(g.dot(&(&problem.w * &resid)), dg.dot(&(&problem.w * &resid)));
        let Some(delta) = jt_w_j.try_inverse().map(|m| m * jt_w_r) else { break };
        let (k_new, r_new) = (kappa + delta[0], rho + delta[1]);
        if !(RHO_LOWER..=RHO_UPPER).contains(&r_new) || (problem.nonneg_kappa && k_new < 0.0) {
            break;
        }
        let o_new = problem.objective(k_new, r_new);
        if !(o_new < obj) {
            break;
        }
        kappa = k_new;
        rho = r_new;
        obj = o_new;
    }

    let edge = 1e-9;
    if rho <= RHO_LOWER + edge || rho >= RHO_UPPER - edge || (problem.nonneg_kappa && kappa == 0.0) {
        flags.push(FitFlag::Boundary);
    }

    // Fit R^2 on the coefficient vector.
    let fitted = problem.shape(rho) * kappa;
    let mean = irf.betas.iter().sum::<f64>() / n as f64;
    let sst: f64 = irf.betas.iter().map(|b| (b - mean).powi(2)).sum();
    let sse: f64 = (&problem.beta - &fitted).iter().map(|e| e * e).sum();
    let r_squared = if sst > 0.0 { 1.0 - sse / sst } else if sse == 0.0 { 1.0 } else { 0.0 };

    let (kappa_se, rho_se) = sandwich_se(&problem, &irf.covariance, kappa, rho);

    Ok(GeometricFit {
        kappa_bps: kappa * BPS,
        rho,
        half_life: half_life(rho).unwrap_or(f64::NAN),
        objective: obj,
        dof: n - 2,
        r_squared,
        method,
        convention,
        kappa_se_bps: kappa_se.map(|s| s * BPS),
        rho_se,
        flags,
    })
}

fn sandwich_se(problem: &Problem<'_>, sigma: &DMatrix<f64>, kappa: f64, rho: f64) -> (Option<f64>, Option<f64>) {
    let n = problem.beta.len();
    let mut jac = DMatrix::zeros(n, 2);
    jac.set_column(0, &problem.shape(rho));
    jac.set_column(1, &(problem.dshape(rho) * kappa));
    let bread = jac.transpose() * &problem.w * &jac;
    let Some(inv) = bread.clone().try_inverse() else { return (None, None) };
    if !inv.iter().all(|v| v.is_finite()) {
        return (None, None);
    }
    let wj = &problem.w * &jac;
    let meat = wj.transpose() * sigma * &wj;
    let v = &inv * meat * &inv;
    (Some(v[(0, 0)].max(0.0).sqrt()), Some(v[(1, 1)].max(0.0).sqrt()))
}

/// Per-parameter Wald equality tests between two independent fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldEquality {
    pub kappa: WaldTest,
    pub rho: WaldTest,
}

pub fn wald_equality(low: &GeometricFit, high: &GeometricFit) -> Result<WaldEquality, StructuralError> {
    let est = |v: f64, se: Option<f64>| Estimate { value: v, variance: se.map(|s| s * s) };
    Ok(WaldEquality {
        kappa: wald_pair(est(low.kappa_bps, low.kappa_se_bps), est(high.kappa_bps, high.kappa_se_bps), "kappa")?,
        rho: wald_pair(est(low.rho, low.rho_se), est(high.rho, high.rho_se), "rho")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econometrics::lp::LpMode;

    const HS: [usize; 4] = [1, 3, 6, 12];

    fn noiseless(kappa: f64, rho: f64, conv: IrfConvention, scale: f64) -> IrfEstimate {
        let betas = HS.iter().map(|&h| kappa / BPS * irf_shape(h, rho, conv)).collect();
        let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { scale * (1.0 + i as f64) } else { 0.3 * scale });
        let mode = if conv == IrfConvention::Cumulative { LpMode::Cumulative } else { LpMode::Level };
        IrfEstimate::from_moments(HS.to_vec(), betas, cov, mode).unwrap()
    }

    #[test]
    fn noiseless_recovery_all_methods() {
        for conv in [IrfConvention::LevelH, IrfConvention::LevelHMinus1, IrfConvention::Cumulative] {
            for method in [FitMethod::Gmm, FitMethod::Wls, FitMethod::NlsConstrained] {
                let fit = fit_geometric(&noiseless(1.06, 0.94, conv, 1e-10), method, conv).unwrap();
                assert!((fit.kappa_bps - 1.06).abs() < 1e-8, "{conv:?} {method:?} {}", fit.kappa_bps);
                assert!((fit.rho - 0.94).abs() < 1e-8, "{conv:?} {method:?} {}", fit.rho);
                assert!(fit.objective < 1e-16);
                assert_eq!(fit.dof, 2);
                assert!((fit.half_life - 11.2).abs() < 0.05);
                assert!((fit.r_squared - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn level_and_cumulative_agree() {
        let a = fit_geometric(&noiseless(2.0, 0.8, IrfConvention::LevelHMinus1, 1e-9), FitMethod::Wls, IrfConvention::LevelHMinus1).unwrap();
        let b = fit_geometric(&noiseless(2.0, 0.8, IrfConvention::Cumulative, 1e-9), FitMethod::Wls, IrfConvention::Cumulative).unwrap();
        assert!((a.kappa_bps - b.kappa_bps).abs() < 1e-8 && (a.rho - b.rho).abs() < 1e-8);
    }

    #[test]
    fn singular_gmm_weight_falls_back() {
        let mut irf = noiseless(1.0, 0.9, IrfConvention::LevelHMinus1, 1e-10);
        irf.covariance = DMatrix::from_element(4, 4, 1e-10);
        let fit = fit_geometric(&irf, FitMethod::Gmm, IrfConvention::LevelHMinus1).unwrap();
        assert!(fit.has_flag(FitFlag::DiagonalFallback));
        assert!((fit.rho - 0.9).abs() < 1e-8);
        irf.covariance = DMatrix::zeros(4, 4);
        let fit = fit_geometric(&irf, FitMethod::Wls, IrfConvention::LevelHMinus1).unwrap();
        assert!(fit.has_flag(FitFlag::IdentityFallback));
    }

    #[test]
    fn negative_response_hits_kappa_bound() {
        let mut irf = noiseless(1.0, 0.9, IrfConvention::LevelHMinus1, 1e-10);
        irf.betas.iter_mut().for_each(|b| *b = -*b);
        let fit = fit_geometric(&irf, FitMethod::NlsConstrained, IrfConvention::LevelHMinus1).unwrap();
        assert_eq!(fit.kappa_bps, 0.0);
        assert!(fit.has_flag(FitFlag::Boundary));
        let free = fit_geometric(&irf, FitMethod::Wls, IrfConvention::LevelHMinus1).unwrap();
        assert!((free.kappa_bps + 1.0).abs() < 1e-8);
    }

    #[test]
    fn too_few_horizons() {
        let irf = IrfEstimate::from_moments(vec![1, 2], vec![0.1, 0.05], DMatrix::identity(2, 2), LpMode::Level).unwrap();
        assert!(matches!(fit_geometric(&irf, FitMethod::Wls, IrfConvention::LevelH), Err(EconError::TooFewHorizons(2))));
    }

    /// Independent oracles: the closed-form weighted projection for kappa at
    /// fixed rho, and a brute-force 2,000-point rho grid for the joint optimum.
    #[test]
    fn profile_and_grid_oracles() {
        let betas = vec![1.3e-4, 0.9e-4, 0.8e-4, 0.35e-4];
        let vars = [0.2e-8, 0.3e-8, 0.5e-8, 0.9e-8];
        let cov = DMatrix::from_fn(4, 4, |i, j| if i == j { vars[i] } else { 0.0 });
        let irf = IrfEstimate::from_moments(HS.to_vec(), betas.clone(), cov, LpMode::Level).unwrap();
        let conv = IrfConvention::LevelHMinus1;
        let fit = fit_geometric(&irf, FitMethod::Wls, conv).unwrap();

        let sse = |k: f64, r: f64| -> f64 {
            HS.iter()
                .zip(&betas)
                .zip(&vars)
                .map(|((&h, b), v)| (b - k * r.powi(h as i32 - 1)).powi(2) / v)
                .sum()
        };
        let kappa_at = |r: f64| -> f64 {
            let num: f64 = HS.iter().zip(&betas).zip(&vars).map(|((&h, b), v)| b * r.powi(h as i32 - 1) / v).sum();
            let den: f64 = HS.iter().zip(&vars).map(|(&h, v)| r.powi(2 * (h as i32 - 1)) / v).sum();
            num / den
        };
        // profile check at the fitted rho
        assert!((kappa_at(fit.rho) * BPS - fit.kappa_bps).abs() < 1e-9);

        let mut best = (f64::INFINITY, 0.0);
        for i in 0..2000 {
            let r = 0.001 + 0.998 * i as f64 / 1999.0;
            let o = sse(kappa_at(r), r);
            if o < best.0 {
                best = (o, r);
            }
        }
        let resolution = 0.998 / 1999.0;
        assert!((best.1 - fit.rho).abs() <= resolution, "grid {} fit {}", best.1, fit.rho);
        assert!(fit.objective <= best.0 + 1e-12);
    }

    #[test]
    fn standard_errors_and_wald() {
        let a = fit_geometric(&noiseless(1.0, 0.95, IrfConvention::LevelHMinus1, 1e-10), FitMethod::Gmm, IrfConvention::LevelHMinus1).unwrap();
        let b = fit_geometric(&noiseless(2.0, 0.90, IrfConvention::LevelHMinus1, 1e-10), FitMethod::Gmm, IrfConvention::LevelHMinus1).unwrap();
        assert!(a.kappa_se_bps.unwrap() > 0.0 && a.rho_se.unwrap() > 0.0);
        let w = wald_equality(&a, &b).unwrap();
        assert!(w.kappa.chi2 > 0.0);
        let same = wald_equality(&a, &a).unwrap();
        assert_eq!(same.kappa.p_value, 1.0);
        assert_eq!(same.rho.p_value, 1.0);
    }
}

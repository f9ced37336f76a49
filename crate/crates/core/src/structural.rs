//! Structural models of sentiment feedback: the geometric impulse response,
//! the short-sale-cap piecewise equilibrium, two-population market clearing
//! with corners, and volatility-dependent coefficients.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::month::Month;
use crate::rng::substream;
use crate::series::{MonthlySeries, SeriesError};
use crate::stats::chi2_sf;

/// Basis points per unit of decimal return.
pub const BPS: f64 = 1e4;
/// Persistence at or above this is treated as a unit root.
pub const UNIT_ROOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructuralError {
    #[error("persistence must be positive, got {0}")]
    InvalidRho(f64),
    #[error("persistence {0} is not stationary")]
    NonstationaryRho(f64),
    #[error("no finite binding threshold: arbitrageur risk-bearing is zero")]
    NoFiniteThreshold,
    #[error("no regime clears the market; checked {0:?}")]
    Infeasible(Vec<Regime>),
    #[error("calibration states coincide (V_L = V_H = {0})")]
    DegenerateStates(f64),
    #[error("fit is missing a variance for {0}")]
    MissingVariance(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("simulation needs at least {min} periods, got {got}")]
    TooFewPeriods { got: usize, min: usize },
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// Amplification (bps per one-s.d. shock) and persistence of the feedback loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackParams {
    pub kappa_bps: f64,
    pub rho: f64,
}

/// Horizon indexing of the geometric impulse response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IrfConvention {
    /// `kappa rho^h`, h >= 0.
    LevelH,
    /// `kappa rho^(h-1)`, h >= 1.
    #[serde(rename = "level-h-minus-1")]
    LevelHMinus1,
    /// `kappa (1 - rho^h) / (1 - rho)`.
    Cumulative,
}

impl IrfConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            IrfConvention::LevelH => "level-h",
            IrfConvention::LevelHMinus1 => "level-h-minus-1",
            IrfConvention::Cumulative => "cumulative",
        }
    }
}

impl std::str::FromStr for IrfConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "level-h" => Ok(Self::LevelH),
            "level-h-minus-1" => Ok(Self::LevelHMinus1),
            "cumulative" => Ok(Self::Cumulative),
            other => Err(format!("unknown IRF convention `{other}`")),
        }
    }
}

/// Unit-impact response shape at horizon `h` (the IRF divided by kappa).
pub fn irf_shape(h: usize, rho: f64, convention: IrfConvention) -> f64 {
    match convention {
        IrfConvention::LevelH => rho.powi(h as i32),
        IrfConvention::LevelHMinus1 => rho.powi(h as i32 - 1),
        IrfConvention::Cumulative => {
            if (1.0 - rho).abs() < 1e-12 {
                h as f64
            } else {
                (1.0 - rho.powi(h as i32)) / (1.0 - rho)
            }
        }
    }
}

/// Derivative of [`irf_shape`] with respect to `rho`.
pub fn irf_shape_drho(h: usize, rho: f64, convention: IrfConvention) -> f64 {
    match convention {
        IrfConvention::LevelH => {
            if h == 0 {
                0.0
            } else {
                h as f64 * rho.powi(h as i32 - 1)
            }
        }
        IrfConvention::LevelHMinus1 => {
            if h <= 1 {
                0.0
            } else {
                (h - 1) as f64 * rho.powi(h as i32 - 2)
            }
        }
        IrfConvention::Cumulative => (1..h).map(|j| j as f64 * rho.powi(j as i32 - 1)).sum(),
    }
}

/// Months for the response to halve: `ln(0.5) / ln(rho)`; infinite at a unit root.
pub fn half_life(rho: f64) -> Result<f64, StructuralError> {
    if !(rho > 0.0) {
        return Err(StructuralError::InvalidRho(rho));
    }
    if rho >= 1.0 - UNIT_ROOT_TOL {
        return Ok(f64::INFINITY);
    }
    Ok(0.5f64.ln() / rho.ln())
}

/// Closed-form response of `params` at each horizon, in bps.
pub fn theoretical_irf(params: FeedbackParams, horizons: &[usize], convention: IrfConvention) -> Vec<f64> {
    horizons
        .iter()
        .map(|&h| params.kappa_bps * irf_shape(h, params.rho, convention))
        .collect()
}

/// A simulated feedback path. `innovations[t]` is the standard-normal shock
/// observed in month `t`; it first moves the return of month `t + 1`, so a
/// level regression of `r_{t+h}` on it identifies `kappa rho^(h-1)`.
#[derive(Debug, Clone)]
pub struct FeedbackPath {
    pub innovations: MonthlySeries,
    pub returns: MonthlySeries,
}

/// Drives `r_{t+1} = rho r_t + kappa eps_t` from `r_0 = 0` through a given
/// innovation sequence. Returns are decimal; `kappa_bps` is converted.
pub fn feedback_returns(params: FeedbackParams, innovations: &[f64]) -> Vec<f64> {
    let kappa = params.kappa_bps / BPS;
    let mut r = 0.0;
    innovations
        .iter()
        .map(|e| {
            r = params.rho * r + kappa * e;
            r
        })
        .collect()
}

/// Simulates `periods` months of the geometric feedback model.
///
/// The first `burn_in` draws are discarded; with `burn_in = 0` the path
/// starts at `r_0 = 0`.
pub fn simulate_feedback(
    params: FeedbackParams,
    periods: usize,
    seed: u64,
    burn_in: usize,
    start: Month,
) -> Result<FeedbackPath, StructuralError> {
    if periods < 2 {
        return Err(StructuralError::TooFewPeriods { got: periods, min: 2 });
    }
    if !(0.0..1.0).contains(&params.rho) {
        return Err(StructuralError::NonstationaryRho(params.rho));
    }
    let mut rng = substream(seed, 0);
    let eps: Vec<f64> = (0..periods + burn_in).map(|_| StandardNormal.sample(&mut rng)).collect();
    let r = feedback_returns(params, &eps);
    Ok(FeedbackPath {
        innovations: MonthlySeries::new(start, eps[burn_in..].to_vec())?,
        returns: MonthlySeries::new(start.offset(1), r[burn_in..].to_vec())?,
    })
}

/// Reduced-form short-sale-cap economy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConfig {
    pub lambda: f64,
    pub psi: f64,
    pub theta: f64,
    pub s_bar: f64,
}

impl PiecewiseConfig {
    pub fn validate(&self) -> Result<(), StructuralError> {
        let ok = [self.lambda, self.psi, self.theta, self.s_bar].iter().all(|v| v.is_finite())
            && self.lambda > 0.0
            && self.theta > 0.0
            && self.psi >= 0.0
            && self.s_bar >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(StructuralError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Which branch of the piecewise equilibrium applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapRegime {
    Unconstrained,
    Constrained,
}

/// Shock level above which the arbitrageur short-sale cap binds.
pub fn binding_threshold(cfg: &PiecewiseConfig) -> Result<f64, StructuralError> {
    if cfg.psi == 0.0 {
        return Err(StructuralError::NoFiniteThreshold);
    }
    let lp = cfg.lambda * cfg.psi;
    Ok((1.0 + lp) * cfg.s_bar / (cfg.lambda * cfg.theta * cfg.psi))
}

/// Price deviation for a standardized shock and the branch it falls on.
pub fn piecewise_impact(eps: f64, cfg: &PiecewiseConfig) -> (f64, CapRegime) {
    let binds = match binding_threshold(cfg) {
        Ok(threshold) => eps > threshold,
        Err(_) => false,
    };
    if binds {
        (cfg.lambda * (cfg.theta * eps - cfg.s_bar), CapRegime::Constrained)
    } else {
        (cfg.lambda * cfg.theta * eps / (1.0 + cfg.lambda * cfg.psi), CapRegime::Unconstrained)
    }
}

/// Slopes `(kappa_minus, kappa_plus)` below and above the threshold.
pub fn piecewise_slopes(cfg: &PiecewiseConfig) -> (f64, f64) {
    let plus = cfg.lambda * cfg.theta;
    (plus / (1.0 + cfg.lambda * cfg.psi), plus)
}

/// Two-population (retail, institutional) mean-variance economy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfgConfig {
    pub n_r: f64,
    pub n_i: f64,
    pub gamma_r: f64,
    pub gamma_i: f64,
    pub sigma2: f64,
    /// Institutional funding cap; `None` means uncapped.
    #[serde(default)]
    pub x_bar: Option<f64>,
    #[serde(default = "default_supply")]
    pub supply: f64,
}

fn default_supply() -> f64 {
    1.0
}

impl MfgConfig {
    pub fn validate(&self) -> Result<(), StructuralError> {
        let masses_ok = self.n_r > 0.0 && self.n_i > 0.0 && (self.n_r + self.n_i - 1.0).abs() < 1e-12;
        let ok = masses_ok
            && self.gamma_r > 0.0
            && self.gamma_i > 0.0
            && self.sigma2 > 0.0
            && self.supply.is_finite()
            && self.x_bar.is_none_or(|x| x > 0.0 && x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(StructuralError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Interior,
    ShortCapBinding,
    RetailCorner,
    FundingCapBinding,
    /// Funding cap binds and retail holds nothing.
    FundingCapRetailCorner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumResult {
    /// Expected-return deviation induced by sentiment relative to the
    /// no-sentiment interior benchmark (return units).
    pub price_deviation: f64,
    pub x_r: f64,
    pub x_i: f64,
    pub regime: Regime,
    pub implied_f: f64,
    pub clearing_residual: f64,
}

/// Solves market clearing `n_R x_R + n_I x_I = supply` with demands
/// `x_R = (f + theta)/(gamma_R sigma2)`, `x_I = f/(gamma_I sigma2)` subject to
/// `x_I >= 0`, `x_R >= 0` and `x_I <= x_bar`.
///
/// Regimes are tried in order (interior, single corners, double corner) and
/// the first one whose complementary-slackness conditions hold is returned.
pub fn mfg_clearing(cfg: &MfgConfig, theta: f64) -> Result<EquilibriumResult, StructuralError> {
    cfg.validate()?;
    let cr = cfg.gamma_r * cfg.sigma2;
    let ci = cfg.gamma_i * cfg.sigma2;
    let (a_r, a_i) = (cfg.n_r / cr, cfg.n_i / ci);
    let s = cfg.supply;
    let tol = 1e-12;
    let cap = cfg.x_bar.unwrap_or(f64::INFINITY);
    let benchmark_f = s / (a_r + a_i);

    let desired_r = |f: f64| (f + theta) / cr;
    let desired_i = |f: f64| f / ci;
    let build = |f: f64, x_r: f64, x_i: f64, regime: Regime| EquilibriumResult {
        price_deviation: benchmark_f - f,
        x_r,
        x_i,
        regime,
        implied_f: f,
        clearing_residual: cfg.n_r * x_r + cfg.n_i * x_i - s,
    };

    let mut tried = Vec::new();

    // Interior.
    tried.push(Regime::Interior);
    let f = (s - a_r * theta) / (a_r + a_i);
    let (xr, xi) = (desired_r(f), desired_i(f));
    if xi >= -tol && xr >= -tol && xi <= cap + tol {
        return Ok(build(f, xr, xi, Regime::Interior));
    }

    // Institutional short-sale constraint binds: retail alone holds supply.
    tried.push(Regime::ShortCapBinding);
    let xr = s / cfg.n_r;
    let f = cr * xr - theta;
    if xr >= -tol && desired_i(f) <= tol {
        return Ok(build(f, xr, 0.0, Regime::ShortCapBinding));
    }

    // Retail non-negativity binds: institutions alone hold supply.
    tried.push(Regime::RetailCorner);
    let xi = s / cfg.n_i;
    let f = ci * xi;
    if xi >= -tol && xi <= cap + tol && desired_r(f) <= tol {
        return Ok(build(f, 0.0, xi, Regime::RetailCorner));
    }

    if let Some(x_bar) = cfg.x_bar {
        // Funding cap binds: retail absorbs the remainder.
        tried.push(Regime::FundingCapBinding);
        let xr = (s - cfg.n_i * x_bar) / cfg.n_r;
        let f = cr * xr - theta;
        if xr >= -tol && desired_i(f) >= x_bar - tol {
            return Ok(build(f, xr, x_bar, Regime::FundingCapBinding));
        }

        // Both bind; clears only when capped institutions exactly hold supply.
        tried.push(Regime::FundingCapRetailCorner);
        if (cfg.n_i * x_bar - s).abs() < tol {
            let f = ci * x_bar;
            if desired_r(f) <= tol {
                return Ok(build(f, 0.0, x_bar, Regime::FundingCapRetailCorner));
            }
        }
    }

    Err(StructuralError::Infeasible(tried))
}

/// Functional form of the volatility-dependent coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum StateForm {
    Affine {
        kappa0: f64,
        kappa1: f64,
        rho0: f64,
        rho1: f64,
    },
    Logistic {
        alpha: f64,
        m: f64,
        kappa_min: f64,
        kappa_max: f64,
        beta: f64,
        m_kappa: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParamSpec {
    #[serde(flatten)]
    pub form: StateForm,
    #[serde(default = "default_rho_clip")]
    pub rho_clip: (f64, f64),
}

fn default_rho_clip() -> (f64, f64) {
    (0.001, 0.999)
}

impl StateParamSpec {
    pub fn new(form: StateForm) -> Self {
        Self { form, rho_clip: default_rho_clip() }
    }
}

/// `(kappa(V), rho(V))` with rho clipped into the spec's bounds.
pub fn state_params(v: f64, spec: &StateParamSpec) -> FeedbackParams {
    let (kappa, rho) = match spec.form {
        StateForm::Affine { kappa0, kappa1, rho0, rho1 } => (kappa0 + kappa1 * v, rho0 + rho1 * v),
        StateForm::Logistic { alpha, m, kappa_min, kappa_max, beta, m_kappa } => (
            kappa_min + (kappa_max - kappa_min) / (1.0 + (-beta * (v - m_kappa)).exp()),
            1.0 / (1.0 + (alpha * (v - m)).exp()),
        ),
    };
    let (lo, hi) = spec.rho_clip;
    FeedbackParams { kappa_bps: kappa, rho: rho.clamp(lo, hi) }
}

/// Affine `kappa(V)`, `rho(V)` passing exactly through the low- and
/// high-volatility targets.
pub fn calibrate_affine(
    low: FeedbackParams,
    high: FeedbackParams,
    v_low: f64,
    v_high: f64,
) -> Result<StateParamSpec, StructuralError> {
    if v_low == v_high {
        return Err(StructuralError::DegenerateStates(v_low));
    }
    let d = v_low - v_high;
    Ok(StateParamSpec::new(StateForm::Affine {
        kappa0: (high.kappa_bps * v_low - low.kappa_bps * v_high) / d,
        kappa1: (low.kappa_bps - high.kappa_bps) / d,
        rho0: (high.rho * v_low - low.rho * v_high) / d,
        rho1: (low.rho - high.rho) / d,
    }))
}

/// Random-coefficient path with the per-period coefficients kept for audit.
#[derive(Debug, Clone)]
pub struct StatePath {
    pub innovations: MonthlySeries,
    pub returns: MonthlySeries,
    /// `kappa(V_t)` in bps, aligned with `innovations`.
    pub kappa_bps: Vec<f64>,
    /// `rho(V_t)`, aligned with `innovations`.
    pub rho: Vec<f64>,
}

/// `r_{t+1} = rho(V_t) r_t + kappa(V_t) eps_t`, one step per state value,
/// using the same timing as [`simulate_feedback`].
pub fn simulate_state_dependent(
    states: &MonthlySeries,
    spec: &StateParamSpec,
    seed: u64,
) -> Result<StatePath, StructuralError> {
    let mut rng = substream(seed, 0);
    let n = states.len();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let coeffs: Vec<FeedbackParams> = states.values().iter().map(|v| state_params(*v, spec)).collect();
    let mut r = 0.0;
    let returns = coeffs
        .iter()
        .zip(&eps)
        .map(|(p, e)| {
            r = p.rho * r + p.kappa_bps / BPS * e;
            r
        })
        .collect();
    Ok(StatePath {
        innovations: MonthlySeries::new(states.start(), eps)?,
        returns: MonthlySeries::new(states.start().offset(1), returns)?,
        kappa_bps: coeffs.iter().map(|p| p.kappa_bps).collect(),
        rho: coeffs.iter().map(|p| p.rho).collect(),
    })
}

/// One parameter's equality test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaldTest {
    pub chi2: f64,
    pub p_value: f64,
}

/// Point estimate with its sampling variance, as consumed by [`wald_equality`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub variance: Option<f64>,
}

/// `chi2 = (a - b)^2 / (var_a + var_b)` on one degree of freedom, treating
/// the two estimates as independent.
pub fn wald_pair(a: Estimate, b: Estimate, name: &'static str) -> Result<WaldTest, StructuralError> {
    let va = a.variance.ok_or(StructuralError::MissingVariance(name))?;
    let vb = b.variance.ok_or(StructuralError::MissingVariance(name))?;
    let diff = a.value - b.value;
    let denom = va + vb;
    let chi2 = if diff == 0.0 {
        0.0
    } else if denom > 0.0 {
        diff * diff / denom
    } else {
        f64::INFINITY
    };
    Ok(WaldTest { chi2, p_value: chi2_sf(chi2, 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn cfg(lambda: f64, psi: f64, theta: f64, s_bar: f64) -> PiecewiseConfig {
        PiecewiseConfig { lambda, psi, theta, s_bar }
    }

    #[test]
    fn half_life_values() {
        assert!((half_life(0.940).unwrap() - 11.2).abs() < 0.05);
        assert!((half_life(0.950).unwrap() - 13.5).abs() < 0.05);
        assert!((half_life(0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(half_life(1.0).unwrap().is_infinite());
        assert!(matches!(half_life(0.0), Err(StructuralError::InvalidRho(_))));
        // closed form, not the 9.1 quoted in one table
        assert!((half_life(0.925).unwrap() - 8.89).abs() < 0.01);
        let mut prev = 0.0;
        for i in 1..1000 {
            let h = half_life(i as f64 / 1000.0).unwrap();
            assert!(h > prev);
            prev = h;
        }
    }

    #[test]
    fn irf_conventions() {
        let p = FeedbackParams { kappa_bps: 1.0, rho: 0.5 };
        assert_eq!(theoretical_irf(p, &[0, 1, 2], IrfConvention::LevelH), vec![1.0, 0.5, 0.25]);
        assert!((theoretical_irf(p, &[2], IrfConvention::Cumulative)[0] - 1.5).abs() < 1e-15);
        let q = FeedbackParams { kappa_bps: 1.06, rho: 0.94 };
        let v = theoretical_irf(q, &[12], IrfConvention::LevelH)[0];
        assert!((v - 1.06 * 0.94f64.powi(12)).abs() < 1e-15);
        assert!((v - 0.5045).abs() < 5e-5);
    }

    #[test]
    fn irf_at_half_life_is_half_kappa() {
        // rho = 0.5^(1/k) gives an integer half-life k
        for k in [2usize, 5, 10, 20] {
            let rho = 0.5f64.powf(1.0 / k as f64);
            let hl = half_life(rho).unwrap();
            assert!((hl - k as f64).abs() < 1e-9);
            let p = FeedbackParams { kappa_bps: 3.0, rho };
            let v = theoretical_irf(p, &[hl.round() as usize], IrfConvention::LevelH)[0];
            assert!((v / 1.5 - 1.0).abs() < 0.01);
        }
    }

    #[test]
    fn shape_derivative_matches_finite_difference() {
        for conv in [IrfConvention::LevelH, IrfConvention::LevelHMinus1, IrfConvention::Cumulative] {
            for h in [1usize, 3, 6, 12] {
                let rho = 0.83;
                let d = 1e-6;
                let fd = (irf_shape(h, rho + d, conv) - irf_shape(h, rho - d, conv)) / (2.0 * d);
                assert!((fd - irf_shape_drho(h, rho, conv)).abs() < 1e-7, "{conv:?} h={h}");
            }
        }
    }

    #[test]
    fn simulate_zero_kappa_and_errors() {
        let start: Month = "2000-01".parse().unwrap();
        let p = FeedbackParams { kappa_bps: 0.0, rho: 0.9 };
        let path = simulate_feedback(p, 50, 1, 0, start).unwrap();
        assert!(path.returns.values().iter().all(|r| *r == 0.0));
        let bad = FeedbackParams { kappa_bps: 1.0, rho: 1.0 };
        assert!(matches!(simulate_feedback(bad, 50, 1, 0, start), Err(StructuralError::NonstationaryRho(_))));
    }

    #[test]
    fn simulated_moments_match_ar1_theory() {
        let start: Month = "2000-01".parse().unwrap();
        let p = FeedbackParams { kappa_bps: 1.06, rho: 0.94 };
        let path = simulate_feedback(p, 100_000, 11, 0, start).unwrap();
        let r = path.returns.values();
        assert!((stats::autocorr1(r) - 0.94).abs() < 0.01);
        let k = 1.06e-4;
        let theory = k * k / (1.0 - 0.94 * 0.94);
        let v = stats::sample_variance(r);
        assert!((v / theory - 1.0).abs() < 0.03, "{v} vs {theory}");
    }

    #[test]
    fn threshold_examples() {
        assert!((binding_threshold(&cfg(1.0, 1.0, 1.0, 0.5)).unwrap() - 1.0).abs() < 1e-15);
        assert!((binding_threshold(&cfg(2.0, 0.5, 1.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(binding_threshold(&cfg(1.0, 1.0, 1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(binding_threshold(&cfg(1.0, 0.0, 1.0, 1.0)), Err(StructuralError::NoFiniteThreshold));
    }

    #[test]
    fn piecewise_examples() {
        let c = cfg(1.0, 1.0, 1.0, 0.5);
        assert_eq!(piecewise_impact(0.5, &c), (0.25, CapRegime::Unconstrained));
        assert_eq!(piecewise_impact(2.0, &c), (1.5, CapRegime::Constrained));
        let (m_u, reg) = piecewise_impact(1.0, &c);
        assert_eq!(reg, CapRegime::Unconstrained);
        assert!((m_u - 0.5).abs() < 1e-15);
        assert!((c.lambda * (c.theta * 1.0 - c.s_bar) - 0.5).abs() < 1e-15);
        assert_eq!(piecewise_slopes(&c), (0.5, 1.0));
        let flat = cfg(2.0, 0.0, 1.5, 1.0);
        assert_eq!(piecewise_slopes(&flat), (3.0, 3.0));
    }

    #[test]
    fn comparative_statics_by_finite_difference() {
        let d = 1e-6;
        for &lambda in &[0.5, 1.0, 2.0] {
            for &psi in &[0.2, 1.0, 3.0] {
                for &s_bar in &[0.1, 0.5, 1.0] {
                    let c = cfg(lambda, psi, 1.3, s_bar);
                    let kp = |l: f64| piecewise_slopes(&cfg(l, psi, 1.3, s_bar)).1;
                    assert!(((kp(lambda + d) - kp(lambda - d)) / (2.0 * d) - 1.3).abs() < 1e-6);
                    let km = |p: f64| piecewise_slopes(&cfg(lambda, p, 1.3, s_bar)).0;
                    assert!(km(psi + d) < km(psi - d));
                    let eps = |l: f64, s: f64| binding_threshold(&cfg(l, psi, 1.3, s)).unwrap();
                    assert!(eps(lambda + d, s_bar) < eps(lambda - d, s_bar));
                    assert!(eps(lambda, s_bar + d) > eps(lambda, s_bar - d));
                    let _ = c;
                }
            }
        }
    }

    #[test]
    fn positive_shocks_move_prices_more() {
        let c = cfg(1.0, 2.0, 1.0, 0.2);
        let star = binding_threshold(&c).unwrap();
        for k in 1..20 {
            let e = star * (1.0 + k as f64 * 0.25);
            let up = piecewise_impact(e, &c).0.abs();
            let (down, reg) = piecewise_impact(-e, &c);
            assert_eq!(reg, CapRegime::Unconstrained);
            assert!(up > down.abs());
        }
    }

    fn sym() -> MfgConfig {
        MfgConfig { n_r: 0.5, n_i: 0.5, gamma_r: 2.0, gamma_i: 2.0, sigma2: 1.0, x_bar: None, supply: 1.0 }
    }

    #[test]
    fn mfg_interior_and_corner() {
        let e = mfg_clearing(&sym(), 0.0).unwrap();
        assert_eq!(e.regime, Regime::Interior);
        assert!((e.implied_f - 2.0).abs() < 1e-12);
        assert!((e.x_r - 1.0).abs() < 1e-12 && (e.x_i - 1.0).abs() < 1e-12);
        assert_eq!(e.x_r, e.x_i);

        let c = mfg_clearing(&sym(), 6.0).unwrap();
        assert_eq!(c.regime, Regime::ShortCapBinding);
        assert_eq!(c.x_i, 0.0);
        assert!((c.x_r - 2.0).abs() < 1e-12);
        assert!((c.implied_f + 2.0).abs() < 1e-12);
        assert!(c.clearing_residual.abs() < 1e-10);
    }

    #[test]
    fn mfg_other_corners_clear() {
        let r = mfg_clearing(&sym(), -6.0).unwrap();
        assert_eq!(r.regime, Regime::RetailCorner);
        assert_eq!(r.x_r, 0.0);
        let capped = MfgConfig { x_bar: Some(1.2), ..sym() };
        let f = mfg_clearing(&capped, -1.5).unwrap();
        assert_eq!(f.regime, Regime::FundingCapBinding);
        assert_eq!(f.x_i, 1.2);
        let both = MfgConfig { x_bar: Some(2.0), ..sym() };
        let d = mfg_clearing(&both, -10.0).unwrap();
        assert_eq!(d.regime, Regime::RetailCorner);
        for theta in [-20.0, -3.0, -1.0, 0.0, 0.7, 2.0, 5.0, 40.0] {
            for cfg in [sym(), capped, both] {
                let e = mfg_clearing(&cfg, theta).unwrap();
                assert!(e.clearing_residual.abs() < 1e-10);
                assert!(e.x_i >= 0.0 && e.x_r >= 0.0);
                assert!(e.x_i <= cfg.x_bar.unwrap_or(f64::INFINITY));
            }
        }
    }

    #[test]
    fn mfg_rejects_bad_masses() {
        let bad = MfgConfig { n_r: 0.6, ..sym() };
        assert!(matches!(mfg_clearing(&bad, 0.0), Err(StructuralError::InvalidConfig(_))));
        let tight = MfgConfig { x_bar: Some(1.0), supply: 1.0, ..sym() };
        // capped institutions hold half the supply and retail is forced to take the rest
        assert_eq!(mfg_clearing(&tight, -100.0).unwrap().regime, Regime::FundingCapBinding);
    }

    #[test]
    fn state_param_examples() {
        let spec = StateParamSpec::new(StateForm::Affine { kappa0: -0.25, kappa1: 0.075, rho0: 0.975, rho1: -0.0025 });
        assert!((state_params(10.0, &spec).kappa_bps - 0.5).abs() < 1e-12);
        assert!((state_params(30.0, &spec).kappa_bps - 2.0).abs() < 1e-12);
        assert_eq!(state_params(1000.0, &spec).rho, 0.001);
        let logi = StateParamSpec::new(StateForm::Logistic {
            alpha: 0.3,
            m: 20.0,
            kappa_min: 0.5,
            kappa_max: 2.0,
            beta: 0.2,
            m_kappa: 20.0,
        });
        assert!((state_params(20.0, &logi).rho - 0.5).abs() < 1e-15);
        assert!((state_params(20.0, &logi).kappa_bps - 1.25).abs() < 1e-15);
    }

    #[test]
    fn affine_calibration() {
        let lo = FeedbackParams { kappa_bps: 0.5, rho: 0.95 };
        let hi = FeedbackParams { kappa_bps: 2.0, rho: 0.90 };
        let spec = calibrate_affine(lo, hi, 10.0, 30.0).unwrap();
        match spec.form {
            StateForm::Affine { kappa0, kappa1, rho0, rho1 } => {
                assert!((kappa0 + 0.25).abs() < 1e-12 && (kappa1 - 0.075).abs() < 1e-12);
                assert!((rho0 - 0.975).abs() < 1e-12 && (rho1 + 0.0025).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
        assert!((state_params(30.0, &spec).rho - 0.90).abs() < 1e-12);
        assert!((state_params(10.0, &spec).rho - 0.95).abs() < 1e-12);
        let flat = calibrate_affine(lo, FeedbackParams { kappa_bps: 0.5, rho: 0.95 }, 10.0, 30.0).unwrap();
        if let StateForm::Affine { kappa0, kappa1, .. } = flat.form {
            assert_eq!(kappa1, 0.0);
            assert!((kappa0 - 0.5).abs() < 1e-15);
        }
        assert!(matches!(calibrate_affine(lo, hi, 5.0, 5.0), Err(StructuralError::DegenerateStates(_))));
    }

    #[test]
    fn constant_state_reduces_to_feedback() {
        let start: Month = "2000-01".parse().unwrap();
        let spec = StateParamSpec::new(StateForm::Affine { kappa0: 1.06, kappa1: 0.0, rho0: 0.94, rho1: 0.0 });
        let v = MonthlySeries::new(start, vec![17.0; 500]).unwrap();
        let a = simulate_state_dependent(&v, &spec, 9).unwrap();
        let b = simulate_feedback(FeedbackParams { kappa_bps: 1.06, rho: 0.94 }, 500, 9, 0, start).unwrap();
        for (x, y) in a.returns.values().iter().zip(b.returns.values()) {
            assert!((x - y).abs() < 1e-18);
        }
        assert!(a.rho.iter().all(|r| *r == 0.94));
    }

    #[test]
    fn two_regime_autocorrelations() {
        let start: Month = "1900-01".parse().unwrap();
        let lo = FeedbackParams { kappa_bps: 1.0, rho: 0.95 };
        let hi = FeedbackParams { kappa_bps: 2.0, rho: 0.90 };
        let spec = calibrate_affine(lo, hi, 10.0, 30.0).unwrap();
        let n = 100_000;
        let states: Vec<f64> = (0..2 * n).map(|t| if t < n { 10.0 } else { 30.0 }).collect();
        let path = simulate_state_dependent(&MonthlySeries::new(start, states).unwrap(), &spec, 5).unwrap();
        let r = path.returns.values();
        assert!((stats::autocorr1(&r[1000..n]) - 0.95).abs() < 0.02);
        assert!((stats::autocorr1(&r[n + 1000..]) - 0.90).abs() < 0.02);
        // conditional IRF decreasing in V at long horizons
        let irf_lo = theoretical_irf(state_params(10.0, &spec), &[24], IrfConvention::LevelH)[0];
        let irf_hi = theoretical_irf(state_params(30.0, &spec), &[24], IrfConvention::LevelH)[0];
        assert!((irf_lo - 0.95f64.powi(24)).abs() < 1e-12);
        assert!((irf_hi - 2.0 * 0.90f64.powi(24)).abs() < 1e-12);
    }

    #[test]
    fn wald_examples() {
        let e = |v, var| Estimate { value: v, variance: Some(var) };
        let t = wald_pair(e(1.0, 0.5), e(3.0, 0.5), "kappa").unwrap();
        assert!((t.chi2 - 4.0).abs() < 1e-12);
        assert!((t.p_value - 0.0455).abs() < 1e-4);
        let same = wald_pair(e(2.0, 0.1), e(2.0, 0.1), "kappa").unwrap();
        assert_eq!(same.chi2, 0.0);
        assert_eq!(same.p_value, 1.0);
        let miss = Estimate { value: 1.0, variance: None };
        assert_eq!(wald_pair(miss, e(1.0, 1.0), "rho"), Err(StructuralError::MissingVariance("rho")));
    }
}

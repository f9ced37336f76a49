//! Run configuration, read from a single TOML file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use sentfeed::econometrics::{CrossHorizonCov, FitMethod, LpMode};
use sentfeed::panel::{Clustering, RegimeThresholds, Term};
use sentfeed::portfolio::{SortConfig, Weighting};
use sentfeed::structural::IrfConvention;
use sentfeed::Month;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Shocks,
    Irf,
    Fit,
    Bootstrap,
    Panel,
    Sort,
    Adjust,
    Falsify,
    Report,
}

impl Stage {
    /// Execution order.
    pub const ALL: [Stage; 10] = [
        Stage::Simulate,
        Stage::Shocks,
        Stage::Irf,
        Stage::Fit,
        Stage::Bootstrap,
        Stage::Panel,
        Stage::Sort,
        Stage::Adjust,
        Stage::Falsify,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Shocks => "shocks",
            Stage::Irf => "irf",
            Stage::Fit => "fit",
            Stage::Bootstrap => "bootstrap",
            Stage::Panel => "panel",
            Stage::Sort => "sort",
            Stage::Adjust => "adjust",
            Stage::Falsify => "falsify",
            Stage::Report => "report",
        }
    }

    /// Stages whose in-memory results this stage reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Simulate | Stage::Shocks | Stage::Sort => &[],
            Stage::Irf | Stage::Panel | Stage::Falsify => &[Stage::Shocks],
            Stage::Fit => &[Stage::Irf],
            Stage::Bootstrap => &[Stage::Irf, Stage::Fit],
            Stage::Adjust => &[Stage::Panel],
            Stage::Report => &[Stage::Irf, Stage::Fit],
        }
    }

    /// This stage plus everything it transitively requires, in run order.
    pub fn closure(self) -> Vec<Stage> {
        let mut need = vec![self];
        let mut i = 0;
        while i < need.len() {
            for d in need[i].requires() {
                if !need.contains(d) {
                    need.push(*d);
                }
            }
            i += 1;
        }
        need.sort();
        need
    }

    /// Fixed offset used to derive the stage's random substream.
    pub fn seed_index(self) -> u64 {
        Stage::ALL.iter().position(|s| *s == self).unwrap_or(0) as u64 + 1
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .iter()
            .copied()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| CliError::Validation(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Decimal,
    Bps,
}

impl Unit {
    pub fn to_decimal(self, v: f64) -> f64 {
        match self {
            Unit::Decimal => v,
            Unit::Bps => v / 1e4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// `month,value`
    pub sentiment: Option<PathBuf>,
    /// `month,ret`
    pub market: Option<PathBuf>,
    #[serde(default)]
    pub market_unit: Unit,
    /// `firm_id,month,ret,breadth,retail,optionable,me,vix[,extra...]`
    pub panel: Option<PathBuf>,
    #[serde(default)]
    pub panel_ret_unit: Unit,
    /// `firm_id,quarter,breadth`, carried to the quarter's three months.
    pub breadth_quarterly: Option<PathBuf>,
    /// `month,<factor columns>` files for long-short alpha regressions.
    #[serde(default)]
    pub factors: Vec<PathBuf>,
}

impl Inputs {
    pub fn is_synthetic(&self) -> bool {
        self.sentiment.is_none() && self.market.is_none() && self.panel.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub start: Month,
    pub months: usize,
    pub burn_in: usize,
    pub kappa_bps: f64,
    pub rho: f64,
    /// Persistence of the simulated sentiment index.
    pub sentiment_phi: f64,
    /// Extra iid return noise (decimal s.d.).
    pub return_noise: f64,
    pub firms: usize,
    pub panel_months: usize,
    /// Firm loading on the shock, decimal return per one-s.d. shock.
    pub firm_beta: f64,
    /// Additional loading of low-breadth firms, as a multiple of `firm_beta`.
    pub low_breadth_extra: f64,
    pub firm_noise: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            start: Month::new(1990, 1).expect("valid"),
            months: 420,
            burn_in: 200,
            kappa_bps: 1.06,
            rho: 0.94,
            sentiment_phi: 0.8,
            return_noise: 0.0,
            firms: 100,
            panel_months: 120,
            firm_beta: 0.003,
            low_breadth_extra: 1.0,
            firm_noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShocksConfig {
    /// Multiply shocks by -1 so that a positive shock means rising sentiment
    /// for a proxy quoted with the opposite sign.
    pub flip: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrfConfig {
    pub horizons: Vec<usize>,
    pub mode: LpMode,
    pub covariance: CrossHorizonCov,
}

impl Default for IrfConfig {
    fn default() -> Self {
        Self { horizons: vec![1, 3, 6, 12], mode: LpMode::Level, covariance: CrossHorizonCov::BlockDiagonal }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub method: FitMethod,
    pub convention: IrfConvention,
    /// Rolling-window length in months; no rolling fits when absent.
    pub rolling_window: Option<usize>,
    pub rolling_step: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { method: FitMethod::Wls, convention: IrfConvention::LevelHMinus1, rolling_window: None, rolling_step: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { reps: 1000, level: 0.95 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelConfig {
    pub horizons: Vec<usize>,
    pub terms: Vec<Term>,
    pub firm_fe: bool,
    pub month_fe: bool,
    pub cluster: Clustering,
    pub regimes: RegimeThresholds,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 3, 6, 12],
            terms: ["eps*low_breadth", "eps*low_breadth*high_vix", "eps*high_retail", "eps*not_optionable"]
                .iter()
                .map(|t| t.parse().expect("valid term"))
                .collect(),
            firm_fe: true,
            month_fe: true,
            cluster: Clustering::TwoWay,
            regimes: RegimeThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SortStageConfig {
    pub signal: String,
    pub n_buckets: usize,
    pub universe: Option<String>,
    pub weighting: Weighting,
    pub skip_month: bool,
    pub cost_bps_oneway: Vec<f64>,
    pub delisting: Option<String>,
    /// Newey-West lag for Sharpe-ratio standard errors.
    pub sharpe_lag: usize,
}

impl SortStageConfig {
    pub fn sort_config(&self) -> SortConfig {
        SortConfig {
            signal: self.signal.clone(),
            n_buckets: self.n_buckets,
            universe: self.universe.clone(),
            weighting: self.weighting,
            skip_month: self.skip_month,
            cost_bps_oneway: self.cost_bps_oneway.clone(),
            delisting: self.delisting.clone(),
        }
    }
}

impl Default for SortStageConfig {
    fn default() -> Self {
        let s = SortConfig::new("breadth");
        Self {
            signal: s.signal,
            n_buckets: s.n_buckets,
            universe: s.universe,
            weighting: s.weighting,
            skip_month: s.skip_month,
            cost_bps_oneway: s.cost_bps_oneway,
            delisting: s.delisting,
            sharpe_lag: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    pub name: String,
    /// Panel terms tested at every panel horizon.
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjustConfig {
    pub reps: usize,
    pub families: Vec<Family>,
}

impl Default for AdjustConfig {
    fn default() -> Self {
        Self { reps: 1000, families: vec![Family { name: "low_breadth".into(), terms: vec!["eps*low_breadth".into()] }] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FalsifyConfig {
    pub horizons: Vec<usize>,
    pub permutation_reps: usize,
    /// Panel term whose firm-level exposure is permuted within months.
    pub permutation_term: String,
}

impl Default for FalsifyConfig {
    fn default() -> Self {
        Self { horizons: vec![1, 3, 6, 12], permutation_reps: 500, permutation_term: "eps*low_breadth".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "all_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub shocks: ShocksConfig,
    #[serde(default)]
    pub irf: IrfConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub panel: PanelConfig,
    #[serde(default)]
    pub sort: SortStageConfig,
    #[serde(default)]
    pub adjust: AdjustConfig,
    #[serde(default)]
    pub falsify: FalsifyConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn all_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // input paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut cfg.inputs;
        for p in [&mut i.sentiment, &mut i.market, &mut i.panel, &mut i.breadth_quarterly].into_iter().flatten() {
            fix(p);
        }
        i.factors.iter_mut().for_each(fix);
        Ok(cfg)
    }

    /// Checks ranges and stage dependencies; returns the stages in run order.
    pub fn validate(&self) -> Result<Vec<Stage>, CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let mut stages = self.stages.clone();
        stages.sort();
        stages.dedup();
        for s in &stages {
            for d in s.requires() {
                if !stages.contains(d) {
                    return Err(CliError::StageDependencyMissing { stage: *s, missing: *d });
                }
            }
        }
        let stochastic = [Stage::Simulate, Stage::Bootstrap, Stage::Adjust, Stage::Falsify];
        if self.seed.is_none() && (self.inputs.is_synthetic() || stages.iter().any(|s| stochastic.contains(s))) {
            return bad("a seed is required (config `seed` or --seed)".into());
        }
        let sim = &self.simulate;
        if !(sim.rho > 0.0 && sim.rho < 1.0) || !(sim.sentiment_phi.abs() < 1.0) {
            return bad("simulate.rho must be in (0, 1) and |sentiment_phi| < 1".into());
        }
        if sim.panel_months > sim.months || sim.firms < 2 || sim.months < 24 {
            return bad("simulate needs months >= 24, panel_months <= months and firms >= 2".into());
        }
        for (name, h) in [("irf", &self.irf.horizons), ("panel", &self.panel.horizons), ("falsify", &self.falsify.horizons)] {
            if h.is_empty() || h.contains(&0) || h.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("{name}.horizons must be increasing positive integers"));
            }
        }
        if self.bootstrap.reps == 0 || self.adjust.reps == 0 || self.falsify.permutation_reps == 0 {
            return bad("replication counts must be positive".into());
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return bad("bootstrap.level must be in (0, 1)".into());
        }
        self.sort.sort_config().validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(stages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.stages, Stage::ALL.to_vec());
        assert!(matches!(cfg.validate(), Err(CliError::Validation(_))));
        cfg.seed = Some(1);
        assert_eq!(cfg.validate().unwrap().len(), 10);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("seed = 1\n[irf]\nhorizon = [1]\n").is_err());
    }

    #[test]
    fn stage_closure_and_dependencies() {
        assert_eq!(Stage::Bootstrap.closure(), vec![Stage::Shocks, Stage::Irf, Stage::Fit, Stage::Bootstrap]);
        let cfg = RunConfig::from_toml("seed = 1\nstages = [\"fit\"]\n").unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::StageDependencyMissing { stage: Stage::Fit, missing: Stage::Irf })));
    }

    #[test]
    fn parses_nested_sections() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            stages = ["shocks", "irf", "fit"]
            [fit]
            method = "gmm"
            convention = "cumulative"
            [irf]
            mode = "cumulative"
            [panel]
            terms = ["eps_pos*low_breadth*high_vix"]
            cluster = "firm"
            [panel.regimes]
            post = [["post_2019", "2019-10"]]
            [sort]
            signal = "retail"
            n_buckets = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.fit.method, FitMethod::Gmm);
        assert_eq!(cfg.panel.terms[0].to_string(), "eps_pos*low_breadth*high_vix");
        assert_eq!(cfg.panel.regimes.post[0].1.to_string(), "2019-10");
        assert_eq!(cfg.sort.n_buckets, 5);
        assert_eq!(cfg.sort.sharpe_lag, 12);
    }

    #[test]
    fn convention_names_match_output_labels() {
        for c in [IrfConvention::LevelH, IrfConvention::LevelHMinus1, IrfConvention::Cumulative] {
            let cfg = RunConfig::from_toml(&format!("[fit]\nconvention = \"{}\"\n", c.as_str())).unwrap();
            assert_eq!(cfg.fit.convention, c);
        }
    }
}

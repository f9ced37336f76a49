//! Stage execution. Stages run one after another in a fixed order; each
//! writes its CSV files through a single [`Emitter`] and the manifest is
//! written last.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use sentfeed::econometrics::{
    fit_geometric, local_projection_irf, ols_hac, rolling_fit, GeometricFit, IrfEstimate, LpOptions, RollingSpec,
};
use sentfeed::inference::{
    fisher_z_ci, lead_lag_test, parametric_irf_bootstrap, permutation_falsification, romano_wolf_stepdown, BootstrapSpec,
    RwModel, Scheme,
};
use sentfeed::panel::{build_design, panel_irf_by_horizon, tag_regimes, Factor, FirmMonthPanel, PanelFit, PanelSpec, Term};
use sentfeed::portfolio::{form_portfolios, portfolio_returns, summarize, turnover_and_costs, CostReport};
use sentfeed::rng::derive_seed;
use sentfeed::series::{estimate_ar1, standardize_shocks, Ar1Fit};
use sentfeed::structural::BPS;
use sentfeed::{MonthlySeries, ShockSeries};

use crate::config::{RunConfig, Stage};
use crate::ingest::{ingest, Dataset};
use crate::manifest::{hash_file, sha256_hex, FileHash, RunManifest, StageTime};
use crate::report::{self, key_value, num, Table};
use crate::synth::synthesize;
use crate::CliError;

/// Writes output files and records their hashes.
pub struct Emitter {
    dir: PathBuf,
    written: BTreeMap<String, FileHash>,
}

impl Emitter {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: BTreeMap::new() })
    }

    pub fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written
            .insert(name.to_string(), FileHash { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn files(&self) -> Vec<FileHash> {
        self.written.values().cloned().collect()
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Results handed from one stage to the next.
#[derive(Default)]
struct Context {
    ar1: Option<Ar1Fit>,
    shocks: Option<ShockSeries>,
    irf: Option<IrfEstimate>,
    fit: Option<GeometricFit>,
    panel: Option<FirmMonthPanel>,
    costs: Option<CostReport>,
}

fn missing(stage: Stage, what: &str) -> CliError {
    CliError::MissingUpstream { stage, what: what.to_string() }
}

/// Hash of the resolved configuration. The output directory and the
/// location of input files are left out; input contents are hashed
/// separately.
pub fn config_hash(cfg: &RunConfig, stages: &[Stage]) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    c.stages = stages.to_vec();
    let strip = |p: &mut PathBuf| {
        if let Some(name) = p.file_name() {
            *p = PathBuf::from(name);
        }
    };
    let i = &mut c.inputs;
    for p in [&mut i.sentiment, &mut i.market, &mut i.panel, &mut i.breadth_quarterly].into_iter().flatten() {
        strip(p);
    }
    i.factors.iter_mut().for_each(strip);
    sha256_hex(serde_json::to_string(&c).expect("config serialises").as_bytes())
}

/// Validates `cfg`, runs its stages and writes the manifest.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let stages = cfg.validate()?;
    let master = cfg.seed.unwrap_or(0);
    let synthetic = cfg.inputs.is_synthetic();
    let mut data = if synthetic { synthesize(&cfg.simulate, derive_seed(master, 0))? } else { ingest(&cfg.inputs)? };
    let inputs = data
        .files
        .iter()
        .map(|p| hash_file(p, p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())))
        .collect::<Result<Vec<_>, _>>()?;

    let mut out = Emitter::new(&cfg.out_dir)?;
    let mut ctx = Context::default();
    if let Some(p) = data.panel.take() {
        ctx.panel = Some(tag_regimes(&p, &cfg.panel.regimes).map_err(|e| CliError::Validation(format!("panel: {e}")))?);
    }
    if !data.notes.is_empty() {
        let mut t = Table::new(&["file", "row", "action", "reason"]);
        for n in &data.notes {
            t.row([n.file.clone(), n.row.to_string(), n.action.to_string(), n.reason.clone()]);
        }
        out.emit("validation.csv", &t.into_bytes())?;
    }

    let mut times = Vec::with_capacity(stages.len());
    for &stage in &stages {
        let t0 = Instant::now();
        let seed = derive_seed(master, stage.seed_index());
        run_stage(stage, cfg, &data, &mut ctx, seed, &mut out)?;
        times.push(StageTime { stage: stage.to_string(), wall_ms: t0.elapsed().as_millis() as u64 });
    }

    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        git_commit: option_env!("SENTFEED_GIT_COMMIT").map(str::to_string),
        config_hash: config_hash(cfg, &stages),
        seed: cfg.seed,
        synthetic_inputs: synthetic,
        inputs,
        stages: times,
        outputs: out.files(),
    };
    manifest.write(&cfg.out_dir)?;
    Ok(RunOutcome { out_dir: cfg.out_dir.clone(), manifest })
}

fn run_stage(stage: Stage, cfg: &RunConfig, data: &Dataset, ctx: &mut Context, seed: u64, out: &mut Emitter) -> Result<(), CliError> {
    let err = |e: &dyn std::fmt::Display| CliError::stage(stage, e);
    match stage {
        Stage::Simulate => {
            if let Some(s) = &data.sentiment {
                out.emit("data/sentiment.csv", &series_csv(s, "value"))?;
            }
            if let Some(m) = &data.market {
                out.emit("data/market.csv", &series_csv(m, "ret"))?;
            }
            if let Some(p) = &ctx.panel {
                out.emit("data/panel.csv", &panel_csv(p))?;
            }
        }
        Stage::Shocks => {
            let s = data.sentiment.as_ref().ok_or_else(|| missing(stage, "sentiment series"))?;
            let fit = estimate_ar1(s).map_err(|e| err(&e))?;
            let mut shocks = standardize_shocks(&fit).map_err(|e| err(&e))?;
            if cfg.shocks.flip {
                shocks = shocks.flipped();
            }
            let mut t = Table::new(&["month", "eps"]);
            for (i, v) in shocks.values().iter().enumerate() {
                t.row([shocks.month_at(i).to_string(), num(*v)]);
            }
            out.emit("shocks.csv", &t.into_bytes())?;
            ctx.ar1 = Some(fit);
            ctx.shocks = Some(shocks);
        }
        Stage::Irf => {
            let shocks = ctx.shocks.as_ref().ok_or_else(|| missing(stage, "shocks"))?;
            let market = data.market.as_ref().ok_or_else(|| missing(stage, "market returns"))?;
            let opts = LpOptions { controls: &[], covariance: cfg.irf.covariance };
            let irf = local_projection_irf(shocks, market, &cfg.irf.horizons, cfg.irf.mode, &opts).map_err(|e| err(&e))?;
            let mut t = Table::new(&["horizon", "beta_bps", "se_bps", "t_stat", "p_value", "nobs"]);
            for (i, h) in irf.horizons.iter().enumerate() {
                let z = irf.betas[i] / irf.ses[i];
                t.row([
                    h.to_string(),
                    num(irf.betas[i] * BPS),
                    num(irf.ses[i] * BPS),
                    num(z),
                    num(sentfeed::stats::normal_two_sided_p(z)),
                    irf.nobs[i].to_string(),
                ]);
            }
            out.emit("irf.csv", &t.into_bytes())?;
            let mut header = vec!["horizon".to_string()];
            header.extend(irf.horizons.iter().map(|h| format!("h{h}")));
            let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
            for (i, h) in irf.horizons.iter().enumerate() {
                let mut row = vec![h.to_string()];
                row.extend((0..irf.horizons.len()).map(|j| num(irf.covariance[(i, j)] * BPS * BPS)));
                t.row(row);
            }
            out.emit("irf_cov.csv", &t.into_bytes())?;
            ctx.irf = Some(irf);
        }
        Stage::Fit => {
            let irf = ctx.irf.as_ref().ok_or_else(|| missing(stage, "impulse responses"))?;
            let fit = fit_geometric(irf, cfg.fit.method, cfg.fit.convention).map_err(|e| err(&e))?;
            out.emit("fit.csv", &fit_csv(&fit))?;
            if let Some(window) = cfg.fit.rolling_window {
                let shocks = ctx.shocks.as_ref().ok_or_else(|| missing(stage, "shocks"))?;
                let market = data.market.as_ref().ok_or_else(|| missing(stage, "market returns"))?;
                let spec = RollingSpec {
                    window,
                    step: cfg.fit.rolling_step,
                    horizons: cfg.irf.horizons.clone(),
                    mode: cfg.irf.mode,
                    method: cfg.fit.method,
                    convention: cfg.fit.convention,
                };
                let points = rolling_fit(shocks, market, &spec).map_err(|e| err(&e))?;
                let mut t = Table::new(&["start", "kappa_bps", "rho", "half_life_months", "r_squared", "flags"]);
                for p in &points {
                    t.row([
                        p.start.to_string(),
                        num(p.fit.kappa_bps),
                        num(p.fit.rho),
                        num(p.fit.half_life),
                        num(p.fit.r_squared),
                        flags(&p.fit),
                    ]);
                }
                out.emit("rolling_fit.csv", &t.into_bytes())?;
            }
            ctx.fit = Some(fit);
        }
        Stage::Bootstrap => {
            let irf = ctx.irf.as_ref().ok_or_else(|| missing(stage, "impulse responses"))?;
            let fit = ctx.fit.as_ref().ok_or_else(|| missing(stage, "geometric fit"))?;
            let spec = BootstrapSpec { level: cfg.bootstrap.level, ..BootstrapSpec::new(Scheme::Parametric, 1, cfg.bootstrap.reps, seed) };
            let pb = parametric_irf_bootstrap(irf, cfg.fit.method, cfg.fit.convention, &spec).map_err(|e| err(&e))?;
            let fz = fisher_z_ci(fit.rho, &pb.rho_draws, cfg.bootstrap.level).map_err(|e| err(&e))?;
            let mut t = Table::new(&["parameter", "point", "lower", "upper", "level", "censored", "reps"]);
            for (name, iv) in [("kappa_bps", pb.kappa_bps), ("rho", pb.rho), ("half_life_months", pb.half_life), ("rho_fisher_z", fz)] {
                t.row([
                    name.to_string(),
                    num(iv.point),
                    num(iv.lower),
                    num(iv.upper),
                    num(iv.level),
                    iv.boundary_flag.to_string(),
                    cfg.bootstrap.reps.to_string(),
                ]);
            }
            out.emit("bootstrap.csv", &t.into_bytes())?;
        }
        Stage::Panel => {
            let panel = ctx.panel.as_ref().ok_or_else(|| missing(stage, "firm-month panel"))?;
            let shocks = ctx.shocks.as_ref().ok_or_else(|| missing(stage, "shocks"))?;
            let fits = panel_irf_by_horizon(panel, Some(shocks), &panel_spec(cfg, 1), &cfg.panel.horizons).map_err(|e| err(&e))?;
            out.emit("panel.csv", &panel_csv_table(&fits))?;
        }
        Stage::Sort => {
            let panel = ctx.panel.as_ref().ok_or_else(|| missing(stage, "firm-month panel"))?;
            let sc = cfg.sort.sort_config();
            let forms = form_portfolios(panel, &sc).map_err(|e| err(&e))?;
            let series = portfolio_returns(&forms, panel, sc.weighting).map_err(|e| err(&e))?;
            let mut t = Table::new(&["month", "bucket", "ret", "count"]);
            for (i, m) in series.months.iter().enumerate() {
                for q in 1..=series.n_buckets {
                    if let Some(r) = series.bucket_return(i, q) {
                        t.row([m.to_string(), q.to_string(), num(r), series.bucket_count(i, q).to_string()]);
                    }
                }
            }
            out.emit("portfolio_buckets.csv", &t.into_bytes())?;
            let costs = turnover_and_costs(&series, &sc.cost_bps_oneway);
            let mut header = vec!["month".to_string(), "ls_gross".into(), "turnover_long".into(), "turnover_short".into()];
            header.extend(costs.costs_bps.iter().map(|c| format!("ls_net_{c}bps")));
            let mut t = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
            for (i, m) in costs.months.iter().enumerate() {
                let mut row = vec![m.to_string(), num(costs.gross[i]), num(costs.turnover_long[i]), num(costs.turnover_short[i])];
                row.extend(costs.net.iter().map(|n| num(n[i])));
                t.row(row);
            }
            out.emit("portfolio_ls.csv", &t.into_bytes())?;
            let summary = summarize(&costs, cfg.sort.sharpe_lag).map_err(|e| err(&e))?;
            let mut t = Table::new(&["series", "cost_bps", "mean", "sd", "sharpe", "sharpe_se", "sharpe_ann", "sharpe_ann_se", "nobs"]);
            let rows = std::iter::once(("gross", 0.0, summary.sharpe)).chain(summary.net_sharpe.iter().map(|(c, s)| ("net", *c, *s)));
            for (name, c, s) in rows {
                let (a, ase) = s.annualized();
                t.row([name.to_string(), num(c), num(s.mean), num(s.sd), num(s.sharpe), num(s.se), num(a), num(ase), s.nobs.to_string()]);
            }
            out.emit("portfolio_summary.csv", &t.into_bytes())?;
            if let Some(f) = &data.factors {
                let (mut y, mut x) = (Vec::new(), Vec::new());
                for (m, g) in costs.months.iter().zip(&costs.gross) {
                    if let Some(row) = f.rows.get(m) {
                        y.push(*g);
                        x.push(row.clone());
                    }
                }
                let k = f.names.len() + 1;
                let design = DMatrix::from_fn(y.len(), k, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
                let fit = ols_hac(&y, &design, cfg.sort.sharpe_lag).map_err(|e| err(&e))?;
                let mut t = Table::new(&["term", "coef", "se", "t_stat", "nobs"]);
                for (j, name) in std::iter::once("alpha").chain(f.names.iter().map(String::as_str)).enumerate() {
                    t.row([name.to_string(), num(fit.coefficients[j]), num(fit.se(j)), num(fit.t_stat(j)), y.len().to_string()]);
                }
                out.emit("portfolio_alpha.csv", &t.into_bytes())?;
            }
            ctx.costs = Some(costs);
        }
        Stage::Adjust => {
            let panel = ctx.panel.as_ref().ok_or_else(|| missing(stage, "firm-month panel"))?;
            let shocks = ctx.shocks.as_ref().ok_or_else(|| missing(stage, "shocks"))?;
            let designs = cfg
                .panel
                .horizons
                .iter()
                .map(|&h| build_design(panel, Some(shocks), &panel_spec(cfg, h)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| err(&e))?;
            let mut t = Table::new(&["family", "label", "horizon", "coef", "t_stat", "raw_p", "p_holm", "p_rw", "few_clusters"]);
            for (k, fam) in cfg.adjust.families.iter().enumerate() {
                let tested = fam
                    .terms
                    .iter()
                    .map(|s| s.parse::<Term>().map(|t| t.to_string()))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err(&e))?;
                let models: Vec<RwModel<'_>> = designs.iter().map(|d| RwModel { design: d, tested: tested.clone() }).collect();
                let res = romano_wolf_stepdown(&fam.name, &models, cfg.adjust.reps, derive_seed(seed, k as u64)).map_err(|e| err(&e))?;
                for i in 0..res.labels.len() {
                    t.row([
                        res.family.clone(),
                        res.labels[i].clone(),
                        res.horizons[i].to_string(),
                        num(res.coefs[i]),
                        num(res.t_stats[i]),
                        num(res.raw_p[i]),
                        num(res.p_holm[i]),
                        num(res.p_rw[i]),
                        res.few_clusters.to_string(),
                    ]);
                }
            }
            out.emit("adjusted_pvalues.csv", &t.into_bytes())?;
        }
        Stage::Falsify => {
            let shocks = ctx.shocks.as_ref().ok_or_else(|| missing(stage, "shocks"))?;
            let market = data.market.as_ref().ok_or_else(|| missing(stage, "market returns"))?;
            let rows = lead_lag_test(shocks, market, &cfg.falsify.horizons).map_err(|e| err(&e))?;
            let mut t = Table::new(&["test", "term", "horizon", "statistic", "se", "p_value", "nobs", "unit"]);
            for r in &rows {
                t.row([
                    "lead_lag".to_string(),
                    "eps_lead".into(),
                    r.horizon.to_string(),
                    num(r.coef * BPS),
                    num(r.se * BPS),
                    num(r.p_value),
                    r.nobs.to_string(),
                    "bps".into(),
                ]);
            }
            if let Some(panel) = &ctx.panel {
                let term: Term = cfg.falsify.permutation_term.parse().map_err(|e| err(&e))?;
                let perm = within_month_permutation(panel, shocks, &term, cfg.falsify.permutation_reps, seed).map_err(|e| err(&e))?;
                t.row([
                    "within_month_permutation".to_string(),
                    term.to_string(),
                    "1".into(),
                    num(perm.0),
                    String::new(),
                    num(perm.1),
                    perm.2.to_string(),
                    "decimal".into(),
                ]);
            }
            out.emit("falsification.csv", &t.into_bytes())?;
        }
        Stage::Report => {
            let irf = ctx.irf.as_ref().ok_or_else(|| missing(stage, "impulse responses"))?;
            let fit = ctx.fit.as_ref().ok_or_else(|| missing(stage, "geometric fit"))?;
            out.emit("calibration.csv", &report::calibration_table(irf, fit))?;
            out.emit("irf_figure.csv", &report::irf_figure(irf, fit))?;
            if let Some(ar1) = &ctx.ar1 {
                out.emit("ar1.csv", &report::ar1_table(ar1))?;
            }
            if let Some(costs) = &ctx.costs {
                let mut t = Table::new(&["cost_bps_oneway", "mean_net_bps", "mean_drag_bps"]);
                for (k, c) in costs.costs_bps.iter().enumerate() {
                    t.row([
                        num(*c),
                        num(sentfeed::stats::mean(&costs.net[k]) * BPS),
                        num(sentfeed::stats::mean(&costs.drag[k]) * BPS),
                    ]);
                }
                out.emit("cost_sensitivity.csv", &t.into_bytes())?;
            }
        }
    }
    Ok(())
}

fn panel_spec(cfg: &RunConfig, horizon: usize) -> PanelSpec {
    PanelSpec {
        horizon,
        outcome: None,
        terms: cfg.panel.terms.clone(),
        firm_fe: cfg.panel.firm_fe,
        month_fe: cfg.panel.month_fe,
        cluster: cfg.panel.cluster,
    }
}

fn flags(fit: &GeometricFit) -> String {
    fit.flags.iter().map(|f| serde_json::to_value(f).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()).collect::<Vec<_>>().join(";")
}

fn fit_csv(fit: &GeometricFit) -> Vec<u8> {
    key_value(&[
        ("method", fit.method.as_str().to_string()),
        ("convention", fit.convention.as_str().to_string()),
        ("kappa_bps", num(fit.kappa_bps)),
        ("kappa_se_bps", fit.kappa_se_bps.map_or_else(String::new, num)),
        ("rho", num(fit.rho)),
        ("rho_se", fit.rho_se.map_or_else(String::new, num)),
        ("half_life_months", num(fit.half_life)),
        ("objective", num(fit.objective)),
        ("dof", fit.dof.to_string()),
        ("r_squared", num(fit.r_squared)),
        ("flags", flags(fit)),
    ])
}

fn panel_csv_table(fits: &[PanelFit]) -> Vec<u8> {
    let mut t = Table::new(&[
        "horizon", "term", "coef", "se", "t_stat", "p_value", "unit", "nobs", "n_firms", "n_months", "adj_r2", "absorbed",
        "singletons_dropped", "psd_repaired",
    ]);
    for f in fits {
        for (i, term) in f.terms.iter().enumerate() {
            t.row([
                f.horizon.to_string(),
                term.clone(),
                num(f.coef_display(i)),
                num(f.se_display(i)),
                num(f.t_stat(i)),
                num(f.p_value(i)),
                if f.shock_term[i] { "bps" } else { "decimal" }.to_string(),
                f.nobs.to_string(),
                f.n_firms.to_string(),
                f.n_months.to_string(),
                num(f.adj_r_squared),
                f.absorbed.join(";"),
                f.singletons_dropped.to_string(),
                (!f.flags.is_empty()).to_string(),
            ]);
        }
    }
    t.into_bytes()
}

fn series_csv(s: &MonthlySeries, col: &str) -> Vec<u8> {
    let mut t = Table::new(&["month", col]);
    for (m, v) in s.iter() {
        t.row([m.to_string(), num(v)]);
    }
    t.into_bytes()
}

fn panel_csv(p: &FirmMonthPanel) -> Vec<u8> {
    let cols = ["ret", "breadth", "retail", "optionable", "me", "vix"];
    let data: Vec<&[f64]> = cols.iter().map(|c| p.column(c).expect("base column")).collect();
    let mut header = vec!["firm_id", "month"];
    header.extend(cols);
    let mut t = Table::new(&header);
    for r in 0..p.len() {
        let mut row = vec![p.firm_id(r).to_string(), p.month(r).to_string()];
        row.extend(data.iter().map(|c| num(c[r])));
        t.row(row);
    }
    t.into_bytes()
}

/// Within-month permutation of a term's firm-level exposure.
///
/// With `x_i` the product of the term's non-shock factors, `e_i` the
/// row's (signed) shock and `y_i` the next-month return demeaned within
/// month, the statistic is `sum_i x_i e_i y_i / n`. Shuffling `x` within
/// months keeps every month's exposure distribution and breaks only the
/// link between exposure and the shock-scaled return. Returns the
/// statistic, its p-value and the number of rows used.
fn within_month_permutation(
    panel: &FirmMonthPanel,
    shocks: &ShockSeries,
    term: &Term,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64, usize), String> {
    if !term.involves_shock() {
        return Err(format!("permutation term `{term}` has no shock factor"));
    }
    let mut exposure = vec![1.0; panel.len()];
    let mut shock = vec![1.0; panel.len()];
    let mut has_exposure = false;
    for f in &term.0 {
        match f {
            Factor::Column(c) => {
                has_exposure = true;
                let col = panel.column(c).map_err(|e| e.to_string())?;
                exposure.iter_mut().zip(col).for_each(|(x, v)| *x *= v);
            }
            Factor::Shock | Factor::ShockPos | Factor::ShockNeg => {
                for (r, s) in shock.iter_mut().enumerate() {
                    let e = shocks.get(panel.month(r)).unwrap_or(f64::NAN);
                    *s *= match f {
                        Factor::ShockPos => e.max(0.0),
                        Factor::ShockNeg => e.min(0.0),
                        _ => e,
                    };
                }
            }
        }
    }
    if !has_exposure {
        return Err(format!("permutation term `{term}` has no firm-level factor"));
    }
    let fwd = panel.forward_return(1);
    let keep: Vec<usize> = (0..panel.len()).filter(|&r| exposure[r].is_finite() && shock[r].is_finite() && fwd[r].is_finite()).collect();
    let mut by_month: BTreeMap<sentfeed::Month, Vec<usize>> = BTreeMap::new();
    for (k, &r) in keep.iter().enumerate() {
        by_month.entry(panel.month(r)).or_default().push(k);
    }
    let mut y: Vec<f64> = keep.iter().map(|&r| fwd[r]).collect();
    let mut bins = vec![0usize; keep.len()];
    for (b, ks) in by_month.values().enumerate() {
        let m = ks.iter().map(|&k| y[k]).sum::<f64>() / ks.len() as f64;
        for &k in ks {
            y[k] -= m;
            bins[k] = b;
        }
    }
    let ey: Vec<f64> = keep.iter().zip(&y).map(|(&r, v)| shock[r] * v).collect();
    let x: Vec<f64> = keep.iter().map(|&r| exposure[r]).collect();
    let n = x.len() as f64;
    let stat = |v: &[f64]| v.iter().zip(&ey).map(|(a, b)| a * b).sum::<f64>() / n;
    let res = permutation_falsification(&x, &bins, stat, reps, seed).map_err(|e| e.to_string())?;
    Ok((res.statistic, res.p_value, keep.len()))
}

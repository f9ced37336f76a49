//! Characteristic-sorted portfolios: breakpoints from a reference universe,
//! equal- and value-weighted bucket returns, long-short spreads, turnover,
//! trading costs and Sharpe ratios with HAC standard errors.
//!
//! Buckets are numbered `1..=n` and use right-closed intervals
//! `(B_{q-1}, B_q]`, so ties at a cutoff go to the lower bucket.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::econometrics::hac_long_run_cov;
use crate::month::Month;
use crate::panel::{FirmMonthPanel, PanelError};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PortfolioError {
    #[error("{month}: {have} firms in the breakpoint universe, need {need}")]
    TooFewInUniverse { month: Month, have: usize, need: usize },
    #[error("invalid sort config: {0}")]
    InvalidConfig(String),
    #[error("series of length {len} too short for lag {lag}")]
    SeriesTooShort { len: usize, lag: usize },
    #[error("no formation month has a usable signal")]
    MissingSignal,
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Equal,
    Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SortConfig {
    pub signal: String,
    #[serde(default = "ten")]
    pub n_buckets: usize,
    /// 0/1 column marking the breakpoint universe; all firms when absent.
    #[serde(default)]
    pub universe: Option<String>,
    #[serde(default)]
    pub weighting: Weighting,
    /// Signal at `t`, return at `t+1`. When false, the return of month `t`.
    #[serde(default = "yes")]
    pub skip_month: bool,
    #[serde(default = "default_costs")]
    pub cost_bps_oneway: Vec<f64>,
    /// Column holding a delisting return, used when the firm has no row in
    /// the holding month.
    #[serde(default)]
    pub delisting: Option<String>,
}

fn ten() -> usize {
    10
}
fn yes() -> bool {
    true
}
fn default_costs() -> Vec<f64> {
    vec![0.0, 5.0, 10.0]
}

impl SortConfig {
    pub fn new(signal: &str) -> Self {
        Self {
            signal: signal.to_string(),
            n_buckets: ten(),
            universe: None,
            weighting: Weighting::Equal,
            skip_month: true,
            cost_bps_oneway: default_costs(),
            delisting: None,
        }
    }

    pub fn validate(&self) -> Result<(), PortfolioError> {
        if self.n_buckets < 2 {
            return Err(PortfolioError::InvalidConfig("n_buckets must be at least 2".into()));
        }
        if self.cost_bps_oneway.iter().any(|c| !(*c >= 0.0)) {
            return Err(PortfolioError::InvalidConfig("costs must be non-negative".into()));
        }
        Ok(())
    }
}

/// Cutoffs `B_0 = -inf < ... < B_n = +inf`; `degenerate` marks repeated
/// interior cutoffs, which leave some buckets empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Breakpoints {
    pub cuts: Vec<f64>,
    pub degenerate: bool,
}

impl Breakpoints {
    /// Bucket `q` in `1..=n` with `B_{q-1} < z <= B_q`.
    pub fn bucket(&self, z: f64) -> usize {
        let n = self.cuts.len() - 1;
        (1..=n).find(|&q| z <= self.cuts[q]).unwrap_or(n)
    }
}

/// Type-7 quantiles of the signal at `q / n` over the flagged universe.
pub fn compute_breakpoints(signal: &[f64], in_universe: &[bool], n_buckets: usize, month: Month) -> Result<Breakpoints, PortfolioError> {
    let mut u: Vec<f64> = signal.iter().zip(in_universe).filter(|(s, f)| **f && s.is_finite()).map(|(s, _)| *s).collect();
    if u.len() < n_buckets {
        return Err(PortfolioError::TooFewInUniverse { month, have: u.len(), need: n_buckets });
    }
    u.sort_by(f64::total_cmp);
    let mut cuts = Vec::with_capacity(n_buckets + 1);
    cuts.push(f64::NEG_INFINITY);
    for q in 1..n_buckets {
        cuts.push(stats::quantile_sorted(&u, q as f64 / n_buckets as f64));
    }
    cuts.push(f64::INFINITY);
    let degenerate = cuts[1..n_buckets].windows(2).any(|w| w[0] == w[1]);
    Ok(Breakpoints { cuts, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Member {
    pub firm: usize,
    pub bucket: usize,
    /// Formation-month market equity.
    pub me: f64,
    /// Formation-month delisting return, if configured.
    pub dlret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Formation {
    pub formed: Month,
    pub held: Month,
    pub breakpoints: Breakpoints,
    pub members: Vec<Member>,
}

/// Assigns each firm with a finite signal to a bucket every month.
pub fn form_portfolios(panel: &FirmMonthPanel, cfg: &SortConfig) -> Result<Vec<Formation>, PortfolioError> {
    cfg.validate()?;
    let signal = panel.column(&cfg.signal)?;
    let universe = cfg.universe.as_deref().map(|c| panel.column(c)).transpose()?;
    let me = panel.column("me")?;
    let dl = cfg.delisting.as_deref().map(|c| panel.column(c)).transpose()?;
    let mut by_month: BTreeMap<Month, Vec<usize>> = BTreeMap::new();
    for r in 0..panel.len() {
        if signal[r].is_finite() {
            by_month.entry(panel.month(r)).or_default().push(r);
        }
    }
    if by_month.is_empty() {
        return Err(PortfolioError::MissingSignal);
    }
    by_month
        .into_iter()
        .map(|(month, rows)| {
            let s: Vec<f64> = rows.iter().map(|&r| signal[r]).collect();
            let flag: Vec<bool> = rows.iter().map(|&r| universe.is_none_or(|u| u[r] != 0.0)).collect();
            let bp = compute_breakpoints(&s, &flag, cfg.n_buckets, month)?;
            let members = rows
                .iter()
                .zip(&s)
                .map(|(&r, &z)| Member {
                    firm: panel.firm_index(r),
                    bucket: bp.bucket(z),
                    me: me[r],
                    dlret: dl.map_or(f64::NAN, |d| d[r]),
                })
                .collect();
            Ok(Formation { formed: month, held: if cfg.skip_month { month.offset(1) } else { month }, breakpoints: bp, members })
        })
        .collect()
}

/// Weights and realized returns of one bucket in one holding month.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Holding {
    pub firms: Vec<usize>,
    pub weights: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Holding {
    pub fn ret(&self) -> f64 {
        self.weights.iter().zip(&self.returns).map(|(w, r)| w * r).sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PortfolioSeries {
    pub n_buckets: usize,
    /// Holding months.
    pub months: Vec<Month>,
    /// `holdings[t][q-1]`; `None` for an empty bucket.
    pub holdings: Vec<Vec<Option<Holding>>>,
    /// Months with both end buckets populated, and their long-short return
    /// (top bucket minus bottom bucket).
    pub ls_months: Vec<Month>,
    pub ls: Vec<f64>,
    /// Months dropped from the long-short series for an empty end bucket.
    pub skipped: Vec<Month>,
}

impl PortfolioSeries {
    pub fn bucket_return(&self, t: usize, q: usize) -> Option<f64> {
        self.holdings[t][q - 1].as_ref().map(Holding::ret)
    }

    pub fn bucket_count(&self, t: usize, q: usize) -> usize {
        self.holdings[t][q - 1].as_ref().map_or(0, |h| h.firms.len())
    }
}

/// Bucket returns over each formation's holding month.
///
/// A member without a row in the holding month contributes its delisting
/// return when one is recorded; otherwise it is dropped and the remaining
/// weights renormalize. Value weights use formation-month market equity.
pub fn portfolio_returns(formations: &[Formation], panel: &FirmMonthPanel, weighting: Weighting) -> Result<PortfolioSeries, PortfolioError> {
    let ret = panel.column("ret")?;
    let n_buckets = formations.first().map_or(0, |f| f.breakpoints.cuts.len() - 1);
    let mut out = PortfolioSeries { n_buckets, months: Vec::new(), holdings: Vec::new(), ls_months: Vec::new(), ls: Vec::new(), skipped: Vec::new() };
    for f in formations {
        let mut buckets: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n_buckets];
        for m in &f.members {
            let r = match panel.row_of(m.firm, f.held) {
                Some(row) => ret[row],
                None if m.dlret.is_finite() => m.dlret,
                None => continue,
            };
            let raw = match weighting {
                Weighting::Equal => 1.0,
                Weighting::Value => m.me,
            };
            if raw.is_finite() && raw > 0.0 {
                buckets[m.bucket - 1].push((m.firm, raw, r));
            }
        }
        let holdings: Vec<Option<Holding>> = buckets
            .into_iter()
            .map(|b| {
                if b.is_empty() {
                    return None;
                }
                let total: f64 = b.iter().map(|x| x.1).sum();
                Some(Holding {
                    firms: b.iter().map(|x| x.0).collect(),
                    weights: b.iter().map(|x| x.1 / total).collect(),
                    returns: b.iter().map(|x| x.2).collect(),
                })
            })
            .collect();
        match (&holdings[n_buckets - 1], &holdings[0]) {
            (Some(hi), Some(lo)) => {
                out.ls_months.push(f.held);
                out.ls.push(hi.ret() - lo.ret());
            }
            _ => out.skipped.push(f.held),
        }
        out.months.push(f.held);
        out.holdings.push(holdings);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub months: Vec<Month>,
    pub turnover_long: Vec<f64>,
    pub turnover_short: Vec<f64>,
    pub gross: Vec<f64>,
    pub costs_bps: Vec<f64>,
    /// Cost drag `drag[c][t]` in decimal return for cost `costs_bps[c]`.
    pub drag: Vec<Vec<f64>>,
    /// `net[c][t] = gross[t] - drag[c][t]`.
    pub net: Vec<Vec<f64>>,
}

/// One-way turnover `0.5 sum_i |w_new - w_drifted|` of one leg, where the
/// previous weights are drifted by their realized returns.
pub fn leg_turnover(prev: Option<&Holding>, next: &Holding) -> f64 {
    let Some(prev) = prev else { return 0.0 };
    let grown: Vec<f64> = prev.weights.iter().zip(&prev.returns).map(|(w, r)| w * (1.0 + r)).collect();
    let total: f64 = grown.iter().sum();
    let mut diff: HashMap<usize, f64> = HashMap::new();
    for (f, g) in prev.firms.iter().zip(&grown) {
        *diff.entry(*f).or_default() -= g / total;
    }
    for (f, w) in next.firms.iter().zip(&next.weights) {
        *diff.entry(*f).or_default() += w;
    }
    let mut v: Vec<f64> = diff.into_values().map(f64::abs).collect();
    v.sort_by(f64::total_cmp);
    0.5 * v.iter().sum::<f64>()
}

/// Turnover of both legs and net long-short returns per cost level.
///
/// Net return is `gross - cost * (turnover_long + turnover_short)` with the
/// cost in decimal one-way terms. The first long-short month has no prior
/// book and is charged zero turnover.
pub fn turnover_and_costs(series: &PortfolioSeries, costs_bps: &[f64]) -> CostReport {
    let nb = series.n_buckets;
    let mut months = Vec::new();
    let mut tl = Vec::new();
    let mut ts = Vec::new();
    let mut gross = Vec::new();
    let mut prev: Option<(&Holding, &Holding)> = None;
    for (t, h) in series.holdings.iter().enumerate() {
        let (Some(hi), Some(lo)) = (&h[nb - 1], &h[0]) else { continue };
        tl.push(leg_turnover(prev.map(|p| p.0), hi));
        ts.push(leg_turnover(prev.map(|p| p.1), lo));
        gross.push(hi.ret() - lo.ret());
        months.push(series.months[t]);
        prev = Some((hi, lo));
    }
    let drag: Vec<Vec<f64>> = costs_bps.iter().map(|c| tl.iter().zip(&ts).map(|(a, b)| c / 1e4 * (a + b)).collect()).collect();
    let net = drag.iter().map(|d| gross.iter().zip(d).map(|(g, x)| g - x).collect()).collect();
    CostReport { months, turnover_long: tl, turnover_short: ts, gross, costs_bps: costs_bps.to_vec(), drag, net }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sharpe {
    pub sharpe: f64,
    pub se: f64,
    pub mean: f64,
    pub sd: f64,
    pub nobs: usize,
}

impl Sharpe {
    /// `sqrt(12)` scaling of the ratio and its SE; the stored value stays monthly.
    pub fn annualized(&self) -> (f64, f64) {
        let k = 12f64.sqrt();
        (self.sharpe * k, self.se * k)
    }
}

/// Monthly Sharpe ratio `mean / sd` with a delta-method SE built from the
/// HAC(lag) covariance of the first two sample moments.
pub fn sharpe_nw(series: &[f64], lag: usize) -> Result<Sharpe, PortfolioError> {
    let n = series.len();
    if n <= lag + 2 {
        return Err(PortfolioError::SeriesTooShort { len: n, lag });
    }
    let m1 = stats::mean(series);
    let m2 = series.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let var = m2 - m1 * m1;
    let sigma = var.sqrt();
    let scores = DMatrix::from_fn(n, 2, |i, j| if j == 0 { series[i] - m1 } else { series[i] * series[i] - m2 });
    let v = hac_long_run_cov(&scores, lag) / (n as f64 * n as f64);
    let g = [m2 / sigma.powi(3), -m1 / (2.0 * sigma.powi(3))];
    let se = (g[0] * g[0] * v[(0, 0)] + 2.0 * g[0] * g[1] * v[(0, 1)] + g[1] * g[1] * v[(1, 1)]).max(0.0).sqrt();
    let sd = stats::sample_sd(series);
    Ok(Sharpe { sharpe: m1 / sd, se, mean: m1, sd, nobs: n })
}

/// Summary metrics of a long-short strategy.
#[derive(Debug, Clone, Serialize)]
pub struct PortfolioSummary {
    pub mean: f64,
    pub vol: f64,
    pub sharpe: Sharpe,
    pub mean_turnover_long: f64,
    pub mean_turnover_short: f64,
    /// `(cost_bps, net Sharpe)` pairs.
    pub net_sharpe: Vec<(f64, Sharpe)>,
}

pub fn summarize(costs: &CostReport, lag: usize) -> Result<PortfolioSummary, PortfolioError> {
    let sharpe = sharpe_nw(&costs.gross, lag)?;
    let net_sharpe = costs
        .costs_bps
        .iter()
        .zip(&costs.net)
        .map(|(c, n)| Ok((*c, sharpe_nw(n, lag)?)))
        .collect::<Result<_, PortfolioError>>()?;
    Ok(PortfolioSummary {
        mean: sharpe.mean,
        vol: sharpe.sd,
        sharpe,
        mean_turnover_long: stats::mean(&costs.turnover_long),
        mean_turnover_short: stats::mean(&costs.turnover_short),
        net_sharpe,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelRow;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn m(s: &str) -> Month {
        s.parse().unwrap()
    }

    fn row(firm: usize, month: Month, ret: f64, me: f64, signal: f64) -> PanelRow {
        PanelRow {
            firm_id: format!("F{firm:02}"),
            month,
            ret,
            breadth: signal,
            retail: 0.0,
            optionable: 1.0,
            me,
            vix: 20.0,
            extra: vec![],
        }
    }

    #[test]
    fn deciles_of_twenty() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        let bp = compute_breakpoints(&s, &[true; 20], 10, m("2000-01")).unwrap();
        let counts = (1..=10).map(|q| s.iter().filter(|z| bp.bucket(**z) == q).count()).collect::<Vec<_>>();
        assert_eq!(counts, vec![2; 10]);
        assert!(!bp.degenerate);
    }

    #[test]
    fn equal_signals_collapse_to_bucket_one() {
        let bp = compute_breakpoints(&[3.0; 12], &[true; 12], 10, m("2000-01")).unwrap();
        assert!(bp.degenerate);
        assert_eq!(bp.bucket(3.0), 1);
        assert_eq!(bp.bucket(bp.cuts[4]), 1);
    }

    #[test]
    fn reference_universe_cuts_apply_to_everyone() {
        // flagged half is 1..=10, unflagged half 0.5..=9.5 gets bucketed by the same cuts
        let mut s: Vec<f64> = (1..=10).map(f64::from).collect();
        s.extend((0..10).map(|i| i as f64 + 0.5));
        let flag: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let bp = compute_breakpoints(&s, &flag, 2, m("2000-01")).unwrap();
        assert_eq!(bp.cuts[1], 5.5);
        assert_eq!(s[10..].iter().filter(|z| bp.bucket(**z) == 1).count(), 6);
        assert!(matches!(compute_breakpoints(&s, &flag, 11, m("2000-01")), Err(PortfolioError::TooFewInUniverse { have: 10, .. })));
    }

    #[test]
    fn value_weight_hand_example() {
        let rows = vec![
            row(0, m("2000-01"), 0.0, 1.0, 1.0),
            row(1, m("2000-01"), 0.0, 3.0, 1.5),
            row(2, m("2000-01"), 0.0, 1.0, 9.0),
            row(3, m("2000-01"), 0.0, 1.0, 9.5),
            row(0, m("2000-02"), 0.04, 1.0, 1.0),
            row(1, m("2000-02"), 0.00, 3.0, 1.0),
            row(2, m("2000-02"), 0.02, 1.0, 1.0),
            row(3, m("2000-02"), 0.02, 1.0, 1.0),
        ];
        let p = FirmMonthPanel::from_rows(rows, &[]).unwrap();
        let cfg = SortConfig { n_buckets: 2, weighting: Weighting::Value, ..SortConfig::new("breadth") };
        let f = form_portfolios(&p, &cfg).unwrap();
        let s = portfolio_returns(&f[..1], &p, Weighting::Value).unwrap();
        assert!((s.bucket_return(0, 1).unwrap() - 0.01).abs() < 1e-15);
        assert!((s.ls[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn exits_use_delisting_return_or_drop() {
        let rows = vec![
            row(0, m("2000-01"), 0.0, 1.0, 1.0),
            row(1, m("2000-01"), 0.0, 1.0, 2.0),
            row(2, m("2000-01"), 0.0, 1.0, 3.0),
            row(3, m("2000-01"), 0.0, 1.0, 4.0),
            row(0, m("2000-02"), 0.02, 1.0, 1.0),
            row(2, m("2000-02"), 0.01, 1.0, 1.0),
            row(3, m("2000-02"), 0.03, 1.0, 1.0),
        ];
        let mut p = FirmMonthPanel::from_rows(rows, &[]).unwrap();
        let cfg = SortConfig { n_buckets: 2, ..SortConfig::new("breadth") };
        let f = form_portfolios(&p, &cfg).unwrap();
        let s = portfolio_returns(&f[..1], &p, Weighting::Equal).unwrap();
        assert_eq!(s.bucket_count(0, 1), 1);
        assert!((s.bucket_return(0, 1).unwrap() - 0.02).abs() < 1e-15);
        p.set_column("dlret", vec![0.0, -0.3, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let cfg = SortConfig { delisting: Some("dlret".into()), ..cfg };
        let f = form_portfolios(&p, &cfg).unwrap();
        let s = portfolio_returns(&f[..1], &p, Weighting::Equal).unwrap();
        assert_eq!(s.bucket_count(0, 1), 2);
        assert!((s.bucket_return(0, 1).unwrap() - (-0.14)).abs() < 1e-15);
    }

    /// 20 assets, 24 months with random signals, returns and ME.
    fn synthetic(seed: u64, equal_me: bool) -> FirmMonthPanel {
        let mut rng = substream(seed, 0);
        let mut rows = Vec::new();
        for t in 0..24 {
            for f in 0..20 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let me = if equal_me { 5.0 } else { 1.0 + 9.0 * rng.random::<f64>() };
                rows.push(row(f, m("2001-01").offset(t), 0.05 * z, me, rng.random()));
            }
        }
        FirmMonthPanel::from_rows(rows, &[]).unwrap()
    }

    /// Independent reference: explicit sort, linear-interpolation cutoffs,
    /// interval scan and direct weighted sums.
    fn brute_force(p: &FirmMonthPanel, n: usize, value: bool) -> Vec<(Month, Vec<f64>, f64)> {
        let sig = p.column("breadth").unwrap();
        let ret = p.column("ret").unwrap();
        let me = p.column("me").unwrap();
        let mut out = Vec::new();
        for month in p.distinct_months() {
            let rows: Vec<usize> = (0..p.len()).filter(|&r| p.month(r) == month).collect();
            let mut sorted: Vec<f64> = rows.iter().map(|&r| sig[r]).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cut = |q: usize| {
                let h = (sorted.len() - 1) as f64 * q as f64 / n as f64;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(sorted.len() - 1);
                sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
            };
            let held = month.offset(1);
            let mut rets = vec![0.0; n];
            let mut wsum = vec![0.0; n];
            for &r in &rows {
                let mut q = n;
                for k in 1..n {
                    if sig[r] <= cut(k) {
                        q = k;
                        break;
                    }
                }
                if let Some(next) = p.row_of(p.firm_index(r), held) {
                    let w = if value { me[r] } else { 1.0 };
                    rets[q - 1] += w * ret[next];
                    wsum[q - 1] += w;
                }
            }
            if wsum.iter().all(|w| *w > 0.0) {
                let b: Vec<f64> = rets.iter().zip(&wsum).map(|(r, w)| r / w).collect();
                out.push((held, b.clone(), b[n - 1] - b[0]));
            }
        }
        out
    }

    #[test]
    fn pipeline_matches_brute_force() {
        for (seed, value) in [(1, false), (2, true)] {
            let p = synthetic(seed, false);
            let w = if value { Weighting::Value } else { Weighting::Equal };
            let cfg = SortConfig { weighting: w, ..SortConfig::new("breadth") };
            let s = portfolio_returns(&form_portfolios(&p, &cfg).unwrap(), &p, w).unwrap();
            let reference = brute_force(&p, 10, value);
            assert_eq!(s.ls_months.len(), reference.len());
            for (i, (month, buckets, ls)) in reference.iter().enumerate() {
                assert_eq!(s.ls_months[i], *month);
                for q in 1..=10 {
                    assert!((s.bucket_return(i, q).unwrap() - buckets[q - 1]).abs() < 1e-12);
                }
                assert!((s.ls[i] - ls).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weights_partition_and_normalize() {
        let p = synthetic(3, false);
        let cfg = SortConfig { weighting: Weighting::Value, ..SortConfig::new("breadth") };
        let f = form_portfolios(&p, &cfg).unwrap();
        for form in &f {
            assert_eq!(form.members.len(), 20);
        }
        let s = portfolio_returns(&f, &p, Weighting::Value).unwrap();
        for h in s.holdings.iter().flatten().flatten() {
            assert!((h.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_me_value_equals_equal() {
        let p = synthetic(4, true);
        let cfg = SortConfig::new("breadth");
        let f = form_portfolios(&p, &cfg).unwrap();
        let ew = portfolio_returns(&f, &p, Weighting::Equal).unwrap();
        let vw = portfolio_returns(&f, &p, Weighting::Value).unwrap();
        assert_eq!(ew.ls, vw.ls);
    }

    fn holding(firms: &[usize], returns: &[f64]) -> Holding {
        let n = firms.len() as f64;
        Holding { firms: firms.to_vec(), weights: vec![1.0 / n; firms.len()], returns: returns.to_vec() }
    }

    fn two_month_series(second_hi: Holding, second_lo: Holding) -> PortfolioSeries {
        let first = vec![Some(holding(&[0, 1], &[0.0, 0.0])), Some(holding(&[2, 3], &[0.0, 0.0]))];
        let second = vec![Some(second_lo), Some(second_hi)];
        PortfolioSeries {
            n_buckets: 2,
            months: vec![m("2000-02"), m("2000-03")],
            holdings: vec![first, second],
            ls_months: vec![],
            ls: vec![],
            skipped: vec![],
        }
    }

    #[test]
    fn turnover_and_cost_drag() {
        // unchanged book, no drift
        let s = two_month_series(holding(&[2, 3], &[0.01, 0.01]), holding(&[0, 1], &[0.0, 0.0]));
        let c = turnover_and_costs(&s, &[0.0, 10.0]);
        assert_eq!(c.turnover_long, vec![0.0, 0.0]);
        assert_eq!(c.net[1], c.gross);
        // complete replacement in both legs
        let s = two_month_series(holding(&[4, 5], &[0.01, 0.03]), holding(&[6, 7], &[0.0, 0.0]));
        let c = turnover_and_costs(&s, &[0.0, 5.0, 10.0]);
        assert_eq!(c.turnover_long[1], 1.0);
        assert_eq!(c.turnover_short[1], 1.0);
        assert_eq!(c.drag[2][1], 0.0020);
        assert!(c.net[1][1] >= c.net[2][1]);
    }

    #[test]
    fn drift_changes_weights() {
        let prev = holding(&[0, 1], &[0.1, -0.1]);
        let next = holding(&[0, 1], &[0.0, 0.0]);
        // drifted weights 0.55 / 0.45 against new 0.5 / 0.5
        assert!((leg_turnover(Some(&prev), &next) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sharpe_population_and_lag_zero() {
        let mut rng = substream(5, 0);
        let x: Vec<f64> = (0..100_000).map(|_| 0.001 + 0.01 * { let z: f64 = StandardNormal.sample(&mut rng); z }).collect();
        let s = sharpe_nw(&x, 12).unwrap();
        assert!((s.sharpe - 0.1).abs() < 0.01);
        let zero: Vec<f64> = x.iter().map(|v| v - 0.001).collect();
        let s0 = sharpe_nw(&zero, 12).unwrap();
        assert!(s0.sharpe.abs() < 2.0 * s0.se);
        // lag 0 against the iid delta method written out by hand
        let y = &x[..500];
        let n = y.len() as f64;
        let m1 = y.iter().sum::<f64>() / n;
        let m2 = y.iter().map(|v| v * v).sum::<f64>() / n;
        let mu3 = y.iter().map(|v| (v - m1).powi(3)).sum::<f64>() / n;
        let mu4 = y.iter().map(|v| (v - m1).powi(4)).sum::<f64>() / n;
        let sig2 = m2 - m1 * m1;
        let sr = m1 / sig2.sqrt();
        let avar = 1.0 - sr * mu3 / sig2.powf(1.5) + sr * sr * (mu4 / (sig2 * sig2) - 1.0) / 4.0;
        let s = sharpe_nw(y, 0).unwrap();
        assert!((s.se - (avar / n).sqrt()).abs() < 1e-12);
        assert!(matches!(sharpe_nw(&x[..14], 12), Err(PortfolioError::SeriesTooShort { .. })));
    }
}

//! Firm-month panels: regime tagging, fixed-effects regressions with
//! shock-interaction terms, and one- or two-way clustered covariances.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::econometrics::gram_inverse;
use crate::month::Month;
use crate::series::ShockSeries;
use crate::stats::{self, normal_two_sided_p};
use crate::structural::BPS;

/// Alternating-projection stopping rule for the within transform.
const DEMEAN_TOL: f64 = 1e-13;
const DEMEAN_MAX_ITER: usize = 100_000;
/// Largest smaller-dimension FE count solved directly in the two-way sweep.
const EXACT_TWO_WAY_MAX: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("duplicate (firm, month) row: {firm} {month} (row {row})")]
    DuplicateRow { firm: String, month: Month, row: usize },
    #[error("non-finite return at row {0}")]
    NonFiniteReturn(usize),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("column `{name}` has {len} values for {rows} rows")]
    ColumnLength { name: String, len: usize, rows: usize },
    #[error("term `{0}` has no variation within the fixed-effects structure")]
    NoWithinVariation(String),
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("need at least 2 firms and 2 months, got {firms} firms and {months} months")]
    TooSmall { firms: usize, months: usize },
    #[error("horizon {0} leaves no usable observations")]
    HorizonTooLong(usize),
    #[error("term needs shocks but none were supplied")]
    MissingShocks,
    #[error("cannot parse term `{0}`")]
    BadTerm(String),
}

/// One input row.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub firm_id: String,
    pub month: Month,
    pub ret: f64,
    pub breadth: f64,
    pub retail: f64,
    pub optionable: f64,
    pub me: f64,
    pub vix: f64,
    /// Values for the panel's extra columns, in declaration order.
    pub extra: Vec<f64>,
}

/// Long-format firm-by-month table.
///
/// Built-in columns are `ret`, `breadth`, `retail`, `optionable`, `me` and
/// `vix`; further named columns hold controls and regime tags. Missing
/// moderator values are NaN; returns must be finite.
#[derive(Debug, Clone)]
pub struct FirmMonthPanel {
    firm_names: Vec<String>,
    firm: Vec<usize>,
    month: Vec<Month>,
    columns: BTreeMap<String, Vec<f64>>,
    index: HashMap<(usize, Month), usize>,
}

/// Column read by shock factors when no shock series is passed.
pub const SHOCK_COLUMN: &str = "eps";

pub const BASE_COLUMNS: [&str; 6] = ["ret", "breadth", "retail", "optionable", "me", "vix"];

impl FirmMonthPanel {
    pub fn from_rows(rows: Vec<PanelRow>, extra_names: &[String]) -> Result<Self, PanelError> {
        let mut firm_lookup: HashMap<String, usize> = HashMap::new();
        let mut firm_names = Vec::new();
        let mut firm = Vec::with_capacity(rows.len());
        let mut month = Vec::with_capacity(rows.len());
        let mut columns: BTreeMap<String, Vec<f64>> = BASE_COLUMNS
            .iter()
            .chain(extra_names.iter().map(|s| s.as_str()).collect::<Vec<_>>().iter())
            .map(|n| (n.to_string(), Vec::with_capacity(rows.len())))
            .collect();
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.into_iter().enumerate() {
            if !row.ret.is_finite() {
                return Err(PanelError::NonFiniteReturn(i));
            }
            if row.extra.len() != extra_names.len() {
                return Err(PanelError::ColumnLength { name: "extra".into(), len: row.extra.len(), rows: extra_names.len() });
            }
            let next = firm_names.len();
            let f = *firm_lookup.entry(row.firm_id.clone()).or_insert(next);
            if f == next {
                firm_names.push(row.firm_id.clone());
            }
            if index.insert((f, row.month), i).is_some() {
                return Err(PanelError::DuplicateRow { firm: row.firm_id, month: row.month, row: i });
            }
            firm.push(f);
            month.push(row.month);
            for (name, v) in BASE_COLUMNS.iter().zip([row.ret, row.breadth, row.retail, row.optionable, row.me, row.vix]) {
                columns.get_mut(*name).expect("base column").push(v);
            }
            for (name, v) in extra_names.iter().zip(row.extra) {
                columns.get_mut(name).expect("extra column").push(v);
            }
        }
        Ok(Self { firm_names, firm, month, columns, index })
    }

    pub fn len(&self) -> usize {
        self.firm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.firm.is_empty()
    }

    pub fn n_firms(&self) -> usize {
        self.firm_names.len()
    }

    pub fn firm_index(&self, row: usize) -> usize {
        self.firm[row]
    }

    pub fn firm_id(&self, row: usize) -> &str {
        &self.firm_names[self.firm[row]]
    }

    pub fn firm_name(&self, firm: usize) -> &str {
        &self.firm_names[firm]
    }

    pub fn month(&self, row: usize) -> Month {
        self.month[row]
    }

    pub fn months(&self) -> &[Month] {
        &self.month
    }

    pub fn firms(&self) -> &[usize] {
        &self.firm
    }

    /// Row of `(firm, month)` if present.
    pub fn row_of(&self, firm: usize, month: Month) -> Option<usize> {
        self.index.get(&(firm, month)).copied()
    }

    /// Sorted distinct months.
    pub fn distinct_months(&self) -> Vec<Month> {
        let mut m = self.month.clone();
        m.sort();
        m.dedup();
        m
    }

    pub fn column(&self, name: &str) -> Result<&[f64], PanelError> {
        self.columns.get(name).map(|v| v.as_slice()).ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.keys().map(|s| s.as_str())
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn set_column(&mut self, name: &str, values: Vec<f64>) -> Result<(), PanelError> {
        if values.len() != self.len() {
            return Err(PanelError::ColumnLength { name: name.to_string(), len: values.len(), rows: self.len() });
        }
        if name == "ret" && values.iter().any(|v| !v.is_finite()) {
            return Err(PanelError::NonFiniteReturn(values.iter().position(|v| !v.is_finite()).unwrap_or(0)));
        }
        self.columns.insert(name.to_string(), values);
        Ok(())
    }

    /// Stores each row's month shock in the [`SHOCK_COLUMN`] column (NaN where
    /// the shock series has no value), so resampling moves shocks with rows.
    pub fn attach_shocks(&mut self, shocks: &ShockSeries) {
        let col = self.month.iter().map(|m| shocks.get(*m).unwrap_or(f64::NAN)).collect();
        self.columns.insert(SHOCK_COLUMN.to_string(), col);
    }

    /// Stores [`forward_return`](Self::forward_return) for `h` as a column and
    /// returns its name.
    pub fn attach_forward_return(&mut self, h: usize) -> String {
        let name = format!("ret_fwd{h}");
        let col = self.forward_return(h);
        self.columns.insert(name.clone(), col);
        name
    }

    /// Rows listed in `keep`, in that order, with months optionally relabelled.
    pub fn select(&self, keep: &[usize], relabel: Option<&[Month]>) -> Result<Self, PanelError> {
        let mut out = Self {
            firm_names: self.firm_names.clone(),
            firm: Vec::with_capacity(keep.len()),
            month: Vec::with_capacity(keep.len()),
            columns: self.columns.keys().map(|k| (k.clone(), Vec::with_capacity(keep.len()))).collect(),
            index: HashMap::with_capacity(keep.len()),
        };
        for (pos, &r) in keep.iter().enumerate() {
            let m = relabel.map_or(self.month[r], |l| l[pos]);
            if out.index.insert((self.firm[r], m), pos).is_some() {
                return Err(PanelError::DuplicateRow { firm: self.firm_id(r).to_string(), month: m, row: pos });
            }
            out.firm.push(self.firm[r]);
            out.month.push(m);
            for (k, v) in &self.columns {
                out.columns.get_mut(k).expect("same keys").push(v[r]);
            }
        }
        Ok(out)
    }

    /// `h`-month-ahead cumulative return of each row's firm, NaN where any
    /// of the months `t+1 ..= t+h` is missing.
    pub fn forward_return(&self, h: usize) -> Vec<f64> {
        let ret = &self.columns["ret"];
        (0..self.len())
            .map(|i| {
                let mut acc = 0.0;
                for j in 1..=h {
                    match self.row_of(self.firm[i], self.month[i].offset(j as i64)) {
                        Some(r) => acc += ret[r],
                        None => return f64::NAN,
                    }
                }
                acc
            })
            .collect()
    }
}

/// Cut-offs for [`tag_regimes`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Per-month cross-sectional quantile at or below which breadth is low.
    #[serde(default = "one_third")]
    pub breadth_quantile: f64,
    /// Time-series quantile of monthly VIX above which a month is high-VIX.
    #[serde(default = "three_quarters")]
    pub vix_quantile: f64,
    /// Per-month quantile above which retail intensity is high.
    #[serde(default = "two_thirds")]
    pub retail_quantile: f64,
    /// `(column name, first month)` pairs for era dummies.
    #[serde(default)]
    pub post: Vec<(String, Month)>,
}

fn one_third() -> f64 {
    1.0 / 3.0
}
fn two_thirds() -> f64 {
    2.0 / 3.0
}
fn three_quarters() -> f64 {
    0.75
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { breadth_quantile: one_third(), vix_quantile: three_quarters(), retail_quantile: two_thirds(), post: Vec::new() }
    }
}

/// Adds indicator columns `low_breadth`, `high_retail`, `high_vix`,
/// `not_optionable` and one column per era dummy.
///
/// Breadth and retail cut-offs are per-month cross-sectional quantiles
/// (ties go to the lower bucket); the VIX cut-off is a quantile of the
/// monthly VIX series over the whole sample, with a strict `>` rule.
pub fn tag_regimes(panel: &FirmMonthPanel, th: &RegimeThresholds) -> Result<FirmMonthPanel, PanelError> {
    let breadth = panel.column("breadth")?;
    let retail = panel.column("retail")?;
    let vix = panel.column("vix")?;
    let optionable = panel.column("optionable")?;
    let n = panel.len();

    let mut by_month: BTreeMap<Month, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        by_month.entry(panel.month(i)).or_default().push(i);
    }

    let cross_section = |values: &[f64], q: f64, low: bool| -> Vec<f64> {
        let mut out = vec![f64::NAN; n];
        for rows in by_month.values() {
            let vals: Vec<f64> = rows.iter().map(|&r| values[r]).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                continue;
            }
            let cut = stats::quantile(&vals, q);
            for &r in rows {
                let v = values[r];
                if v.is_finite() {
                    let tagged = if low { v <= cut } else { v > cut };
                    out[r] = f64::from(u8::from(tagged));
                }
            }
        }
        out
    };

    let low_breadth = cross_section(breadth, th.breadth_quantile, true);
    let high_retail = cross_section(retail, th.retail_quantile, false);

    let monthly_vix: Vec<f64> = by_month
        .values()
        .filter_map(|rows| {
            let v: Vec<f64> = rows.iter().map(|&r| vix[r]).filter(|v| v.is_finite()).collect();
            (!v.is_empty()).then(|| stats::mean(&v))
        })
        .collect();
    let high_vix = if monthly_vix.is_empty() {
        vec![f64::NAN; n]
    } else {
        let cut = stats::quantile(&monthly_vix, th.vix_quantile);
        let month_flag: HashMap<Month, f64> = by_month
            .iter()
            .map(|(m, rows)| {
                let v: Vec<f64> = rows.iter().map(|&r| vix[r]).filter(|v| v.is_finite()).collect();
                let flag = if v.is_empty() { f64::NAN } else { f64::from(u8::from(stats::mean(&v) > cut)) };
                (*m, flag)
            })
            .collect();
        (0..n).map(|i| month_flag[&panel.month(i)]).collect()
    };
    let not_optionable = optionable.iter().map(|o| if o.is_finite() { f64::from(u8::from(*o == 0.0)) } else { f64::NAN }).collect();

    let mut out = panel.clone();
    out.set_column("low_breadth", low_breadth)?;
    out.set_column("high_retail", high_retail)?;
    out.set_column("high_vix", high_vix)?;
    out.set_column("not_optionable", not_optionable)?;
    for (name, from) in &th.post {
        let col = (0..n).map(|i| f64::from(u8::from(panel.month(i) >= *from))).collect();
        out.set_column(name, col)?;
    }
    Ok(out)
}

/// A factor of an interaction term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    Shock,
    ShockPos,
    ShockNeg,
    Column(String),
}

/// Product of factors, written `eps_pos*low_breadth*high_vix`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term(pub Vec<Factor>);

impl Term {
    pub fn involves_shock(&self) -> bool {
        self.0.iter().any(|f| matches!(f, Factor::Shock | Factor::ShockPos | Factor::ShockNeg))
    }
}

impl FromStr for Term {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let factors = s
            .split('*')
            .map(|p| match p.trim() {
                "" => Err(PanelError::BadTerm(s.to_string())),
                "eps" | "shock" => Ok(Factor::Shock),
                "eps_pos" | "shock_pos" => Ok(Factor::ShockPos),
                "eps_neg" | "shock_neg" => Ok(Factor::ShockNeg),
                other => Ok(Factor::Column(other.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Term(factors))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .0
            .iter()
            .map(|x| match x {
                Factor::Shock => "eps",
                Factor::ShockPos => "eps_pos",
                Factor::ShockNeg => "eps_neg",
                Factor::Column(c) => c.as_str(),
            })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clustering {
    /// Heteroskedasticity-robust, no clustering.
    None,
    Firm,
    Month,
    /// Firm + month - firm-by-month.
    #[default]
    TwoWay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelSpec {
    /// Dependent variable is the `horizon`-month-ahead cumulative return,
    /// unless `outcome` names a precomputed column.
    pub horizon: usize,
    #[serde(default)]
    pub outcome: Option<String>,
    pub terms: Vec<Term>,
    #[serde(default = "yes")]
    pub firm_fe: bool,
    #[serde(default = "yes")]
    pub month_fe: bool,
    #[serde(default)]
    pub cluster: Clustering,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PanelFlag {
    /// Clustered covariance had negative eigenvalues, clipped to zero.
    PsdRepaired,
}

/// Estimated panel regression. Coefficients are stored in decimal return
/// units; shock terms are converted to bps only for display.
#[derive(Debug, Clone, Serialize)]
pub struct PanelFit {
    pub horizon: usize,
    pub terms: Vec<String>,
    pub shock_term: Vec<bool>,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    pub nobs: usize,
    pub n_firms: usize,
    pub n_months: usize,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub absorbed: Vec<String>,
    pub singletons_dropped: usize,
    pub flags: Vec<PanelFlag>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl PanelFit {
    pub fn se(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn t_stat(&self, i: usize) -> f64 {
        self.coefficients[i] / self.se(i)
    }

    pub fn p_value(&self, i: usize) -> f64 {
        normal_two_sided_p(self.t_stat(i))
    }

    fn display_scale(&self, i: usize) -> f64 {
        if self.shock_term[i] {
            BPS
        } else {
            1.0
        }
    }

    /// Coefficient in bps per one-s.d. shock for shock terms, raw otherwise.
    pub fn coef_display(&self, i: usize) -> f64 {
        self.coefficients[i] * self.display_scale(i)
    }

    pub fn se_display(&self, i: usize) -> f64 {
        self.se(i) * self.display_scale(i)
    }

    pub fn term_index(&self, name: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == name)
    }
}

/// A fixed-effects regression problem after row filtering: the raw columns,
/// their within-transformed versions and the cluster keys. Refitting with a
/// new outcome only needs [`FeDesign::fit_outcome`].
#[derive(Debug, Clone)]
pub struct FeDesign {
    pub horizon: usize,
    pub terms: Vec<String>,
    pub shock_term: Vec<bool>,
    pub absorbed: Vec<String>,
    pub singletons_dropped: usize,
    /// Raw outcome.
    pub y: Vec<f64>,
    /// Within-transformed outcome.
    pub y_within: Vec<f64>,
    /// Within-transformed regressors (an intercept column is included when
    /// no fixed effects are requested).
    pub x_within: DMatrix<f64>,
    pub firm: Vec<usize>,
    pub month: Vec<Month>,
    firm_group: Vec<usize>,
    month_group: Vec<usize>,
    n_firm_groups: usize,
    n_month_groups: usize,
    pair_group: Vec<usize>,
    n_pair_groups: usize,
    firm_fe: bool,
    month_fe: bool,
    cluster: Clustering,
    has_intercept: bool,
    xtx_inv: Option<DMatrix<f64>>,
    two_way: Option<TwoWaySolver>,
}

/// Exact two-way within transform. The larger FE dimension `a` is swept out
/// by group means; effects of the smaller dimension `b` come from the
/// pseudo-inverse of the reduced normal matrix `D_b' M_a D_b`.
#[derive(Debug, Clone)]
struct TwoWaySolver {
    a: Vec<usize>,
    na: usize,
    b: Vec<usize>,
    nb: usize,
    pinv: DMatrix<f64>,
}

impl TwoWaySolver {
    fn new(a: &[usize], na: usize, b: &[usize], nb: usize) -> Self {
        let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut na_count = vec![0.0; na];
        let mut nb_count = vec![0.0; nb];
        for (&i, &j) in a.iter().zip(b) {
            *cells.entry((i, j)).or_default() += 1.0;
            na_count[i] += 1.0;
            nb_count[j] += 1.0;
        }
        let mut by_a: Vec<Vec<(usize, f64)>> = vec![Vec::new(); na];
        for ((i, j), c) in cells {
            by_a[i].push((j, c));
        }
        let mut m = DMatrix::from_diagonal(&DVector::from_vec(nb_count));
        for (i, row) in by_a.iter().enumerate() {
            for &(j, cj) in row {
                for &(k, ck) in row {
                    m[(j, k)] -= cj * ck / na_count[i];
                }
            }
        }
        let eig = SymmetricEigen::new(m);
        let cut = 1e-10 * eig.eigenvalues.iter().fold(0.0f64, |acc, l| acc.max(l.abs()));
        let inv = eig.eigenvalues.map(|l| if l > cut { 1.0 / l } else { 0.0 });
        let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
        Self { a: a.to_vec(), na, b: b.to_vec(), nb, pinv }
    }

    fn apply(&self, v: &mut [f64]) {
        let mut u = v.to_vec();
        group_means_subtract(&mut u, &self.a, self.na);
        let mut rhs = DVector::zeros(self.nb);
        for (x, &j) in u.iter().zip(&self.b) {
            rhs[j] += x;
        }
        let gamma = &self.pinv * rhs;
        for (x, &j) in v.iter_mut().zip(&self.b) {
            *x -= gamma[j];
        }
        group_means_subtract(v, &self.a, self.na);
    }
}

fn groups<K: std::hash::Hash + Eq + Copy>(keys: &[K]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let idx = keys
        .iter()
        .map(|k| {
            let n = map.len();
            *map.entry(*k).or_insert(n)
        })
        .collect();
    (idx, map.len())
}

fn group_means_subtract(v: &mut [f64], g: &[usize], ng: usize) -> f64 {
    let mut sum = vec![0.0; ng];
    let mut cnt = vec![0usize; ng];
    for (x, &k) in v.iter().zip(g) {
        sum[k] += x;
        cnt[k] += 1;
    }
    let mut max_shift = 0.0f64;
    for k in 0..ng {
        sum[k] /= cnt[k] as f64;
        max_shift = max_shift.max(sum[k].abs());
    }
    for (x, &k) in v.iter_mut().zip(g) {
        *x -= sum[k];
    }
    max_shift
}

impl FeDesign {
    /// Sweeps out the requested fixed effects in place by alternating
    /// projections.
    pub fn demean(&self, v: &mut [f64]) {
        if let Some(solver) = &self.two_way {
            solver.apply(v);
            return;
        }
        demean_with(v, self.firm_fe.then_some((&self.firm_group, self.n_firm_groups)), self.month_fe.then_some((&self.month_group, self.n_month_groups)));
    }

    pub fn nobs(&self) -> usize {
        self.y.len()
    }

    /// Coefficient index of `term` (offset by the intercept when present).
    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.terms.iter().position(|t| t == term).map(|i| i + usize::from(self.has_intercept))
    }

    /// Number of distinct month clusters.
    pub fn n_month_clusters(&self) -> usize {
        self.n_month_groups
    }

    /// Column indices of the estimated coefficients, intercept included.
    pub fn coef_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.has_intercept {
            out.push("const".to_string());
        }
        out.extend(self.terms.iter().cloned());
        out
    }

    fn n_coef(&self) -> usize {
        self.x_within.ncols()
    }

    /// Fit for the design's own outcome.
    pub fn fit(&self) -> Result<PanelFit, PanelError> {
        self.fit_outcome(&self.y_within)
    }

    /// Fits an already within-transformed outcome against the design.
    pub fn fit_outcome(&self, y_within: &[f64]) -> Result<PanelFit, PanelError> {
        let n = y_within.len();
        let k = self.n_coef();
        let yv = DVector::from_column_slice(y_within);
        let (beta, resid) = if k == 0 {
            (DVector::zeros(0), yv.clone())
        } else {
            let inv = self.xtx_inv.as_ref().ok_or(PanelError::SingularDesign)?;
            let b = inv * self.x_within.tr_mul(&yv);
            let r = &yv - &self.x_within * &b;
            (b, r)
        };
        let (covariance, repaired) = if k == 0 {
            (DMatrix::zeros(0, 0), false)
        } else {
            self.cluster_covariance(resid.as_slice())
        };

        // Overall fit: the outcome variation explained by FE and regressors.
        let ym = stats::mean(&self.y);
        let sst: f64 = self.y.iter().map(|v| (v - ym).powi(2)).sum();
        let ssr: f64 = resid.iter().map(|e| e * e).sum();
        let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
        let fe_params = match (self.firm_fe, self.month_fe) {
            (true, true) => self.n_firm_groups + self.n_month_groups - 1,
            (true, false) => self.n_firm_groups,
            (false, true) => self.n_month_groups,
            (false, false) => 0,
        };
        let params = fe_params + k;
        let adj_r_squared = if n > params + 1 && sst > 0.0 {
            1.0 - (1.0 - r_squared) * (n as f64 - 1.0) / (n - params) as f64
        } else {
            f64::NAN
        };

        let start = usize::from(self.has_intercept);
        let mut terms = Vec::new();
        let mut shock = Vec::new();
        if self.has_intercept {
            terms.push("const".to_string());
            shock.push(false);
        }
        terms.extend(self.terms.iter().cloned());
        shock.extend(self.shock_term.iter().copied());
        debug_assert_eq!(terms.len(), k);
        let _ = start;

        Ok(PanelFit {
            horizon: self.horizon,
            terms,
            shock_term: shock,
            coefficients: beta.iter().copied().collect(),
            covariance,
            nobs: n,
            n_firms: self.n_firm_groups,
            n_months: self.n_month_groups,
            r_squared,
            adj_r_squared,
            absorbed: self.absorbed.clone(),
            singletons_dropped: self.singletons_dropped,
            flags: if repaired { vec![PanelFlag::PsdRepaired] } else { Vec::new() },
            residuals: resid.iter().copied().collect(),
        })
    }

    fn cluster_meat(&self, resid: &[f64], keys: &[usize], ng: usize) -> DMatrix<f64> {
        let k = self.n_coef();
        let mut s = DMatrix::zeros(ng, k);
        for (i, &g) in keys.iter().enumerate() {
            for j in 0..k {
                s[(g, j)] += self.x_within[(i, j)] * resid[i];
            }
        }
        s.tr_mul(&s)
    }

    /// Clustered sandwich; returns the matrix and whether PSD repair was needed.
    pub fn cluster_covariance(&self, resid: &[f64]) -> (DMatrix<f64>, bool) {
        let inv = self.xtx_inv.as_ref().expect("nonsingular design");
        let n = resid.len();
        let obs: Vec<usize> = (0..n).collect();
        let meat = match self.cluster {
            Clustering::None => self.cluster_meat(resid, &obs, n),
            Clustering::Firm => self.cluster_meat(resid, &self.firm_group, self.n_firm_groups),
            Clustering::Month => self.cluster_meat(resid, &self.month_group, self.n_month_groups),
            Clustering::TwoWay => {
                self.cluster_meat(resid, &self.firm_group, self.n_firm_groups)
                    + self.cluster_meat(resid, &self.month_group, self.n_month_groups)
                    - self.cluster_meat(resid, &self.pair_group, self.n_pair_groups)
            }
        };
        let v = inv * meat * inv;
        repair_psd((&v + v.transpose()) * 0.5)
    }
}

fn demean_with(v: &mut [f64], firm: Option<(&Vec<usize>, usize)>, month: Option<(&Vec<usize>, usize)>) {
    match (firm, month) {
        (None, None) => {}
        (Some((g, n)), None) | (None, Some((g, n))) => {
            group_means_subtract(v, g, n);
        }
        (Some((gf, nf)), Some((gm, nm))) => {
            let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(f64::MIN_POSITIVE);
            for _ in 0..DEMEAN_MAX_ITER {
                let a = group_means_subtract(v, gf, nf);
                let b = group_means_subtract(v, gm, nm);
                if a.max(b) <= DEMEAN_TOL * scale {
                    break;
                }
            }
        }
    }
}

/// Clips negative eigenvalues to zero. Returns whether any were clipped.
pub fn repair_psd(m: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let k = m.nrows();
    if k == 0 {
        return (m, false);
    }
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if eig.eigenvalues.iter().all(|l| *l >= -1e-12 * scale) {
        return (m, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (fixed, true)
}

fn term_values(panel: &FirmMonthPanel, shocks: Option<&ShockSeries>, term: &Term) -> Result<Vec<f64>, PanelError> {
    let n = panel.len();
    let mut out = vec![1.0; n];
    for f in &term.0 {
        match f {
            Factor::Column(c) => {
                let col = panel.column(c)?;
                out.iter_mut().zip(col).for_each(|(o, v)| *o *= v);
            }
            shock => {
                let attached = panel.columns.get(SHOCK_COLUMN);
                if shocks.is_none() && attached.is_none() {
                    return Err(PanelError::MissingShocks);
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let e = match shocks {
                        Some(s) => s.get(panel.month(i)).unwrap_or(f64::NAN),
                        None => attached.expect("checked")[i],
                    };
                    let v = match shock {
                        Factor::ShockPos => e.max(0.0),
                        Factor::ShockNeg => e.min(0.0),
                        _ => e,
                    };
                    *o *= if e.is_nan() { f64::NAN } else { v };
                }
            }
        }
    }
    Ok(out)
}

fn constant_within(values: &[f64], keys: &[usize], ng: usize) -> bool {
    let mut first = vec![None; ng];
    for (v, &k) in values.iter().zip(keys) {
        match first[k] {
            None => first[k] = Some(*v),
            Some(f) if (f - v).abs() > 1e-12 * f.abs().max(v.abs()).max(1e-300) => return false,
            _ => {}
        }
    }
    true
}

/// Builds the fixed-effects design for `spec` on `panel`.
///
/// Rows lacking the forward return or any term value are dropped, then
/// singleton fixed-effect groups are removed iteratively. Terms that are
/// constant within an included fixed-effect dimension are absorbed and
/// reported rather than estimated.
pub fn build_design(panel: &FirmMonthPanel, shocks: Option<&ShockSeries>, spec: &PanelSpec) -> Result<FeDesign, PanelError> {
    if spec.horizon == 0 {
        return Err(PanelError::HorizonTooLong(0));
    }
    let y_all = match &spec.outcome {
        Some(c) => panel.column(c)?.to_vec(),
        None => panel.forward_return(spec.horizon),
    };
    let cols: Vec<Vec<f64>> = spec.terms.iter().map(|t| term_values(panel, shocks, t)).collect::<Result<_, _>>()?;
    let mut keep: Vec<usize> = (0..panel.len())
        .filter(|&i| y_all[i].is_finite() && cols.iter().all(|c| c[i].is_finite()))
        .collect();
    if keep.is_empty() {
        return Err(PanelError::HorizonTooLong(spec.horizon));
    }

    // Iteratively drop singleton FE groups.
    let before = keep.len();
    loop {
        let mut firm_count: HashMap<usize, usize> = HashMap::new();
        let mut month_count: HashMap<Month, usize> = HashMap::new();
        for &i in &keep {
            *firm_count.entry(panel.firm_index(i)).or_default() += 1;
            *month_count.entry(panel.month(i)).or_default() += 1;
        }
        let next: Vec<usize> = keep
            .iter()
            .copied()
            .filter(|&i| {
                !(spec.firm_fe && firm_count[&panel.firm_index(i)] == 1) && !(spec.month_fe && month_count[&panel.month(i)] == 1)
            })
            .collect();
        if next.len() == keep.len() {
            break;
        }
        keep = next;
    }
    let singletons_dropped = before - keep.len();

    let firm: Vec<usize> = keep.iter().map(|&i| panel.firm_index(i)).collect();
    let month: Vec<Month> = keep.iter().map(|&i| panel.month(i)).collect();
    let (firm_group, n_firm_groups) = groups(&firm);
    let (month_group, n_month_groups) = groups(&month);
    let (pair_group, n_pair_groups) = groups(&firm_group.iter().zip(&month_group).map(|(a, b)| (*a, *b)).collect::<Vec<_>>());
    if n_firm_groups < 2 || n_month_groups < 2 {
        return Err(PanelError::TooSmall { firms: n_firm_groups, months: n_month_groups });
    }

    let mut terms = Vec::new();
    let mut shock_term = Vec::new();
    let mut absorbed = Vec::new();
    let mut x_cols: Vec<Vec<f64>> = Vec::new();
    for (t, c) in spec.terms.iter().zip(&cols) {
        let v: Vec<f64> = keep.iter().map(|&i| c[i]).collect();
        let by_month = spec.month_fe && constant_within(&v, &month_group, n_month_groups);
        let by_firm = spec.firm_fe && constant_within(&v, &firm_group, n_firm_groups);
        if by_month || by_firm {
            absorbed.push(t.to_string());
            continue;
        }
        terms.push(t.to_string());
        shock_term.push(t.involves_shock());
        x_cols.push(v);
    }
    let has_intercept = !spec.firm_fe && !spec.month_fe;
    if has_intercept {
        x_cols.insert(0, vec![1.0; keep.len()]);
    }

    let y: Vec<f64> = keep.iter().map(|&i| y_all[i]).collect();
    let mut design = FeDesign {
        horizon: spec.horizon,
        terms,
        shock_term,
        absorbed,
        singletons_dropped,
        y_within: Vec::new(),
        y: y.clone(),
        x_within: DMatrix::zeros(0, 0),
        firm,
        month,
        firm_group,
        month_group,
        n_firm_groups,
        n_month_groups,
        pair_group,
        n_pair_groups,
        firm_fe: spec.firm_fe,
        month_fe: spec.month_fe,
        cluster: spec.cluster,
        has_intercept,
        xtx_inv: None,
        two_way: None,
    };
    if spec.firm_fe && spec.month_fe && n_firm_groups.min(n_month_groups) <= EXACT_TWO_WAY_MAX {
        let (fg, mg) = (&design.firm_group, &design.month_group);
        design.two_way = Some(if n_firm_groups >= n_month_groups {
            TwoWaySolver::new(fg, n_firm_groups, mg, n_month_groups)
        } else {
            TwoWaySolver::new(mg, n_month_groups, fg, n_firm_groups)
        });
    }

    let mut y_within = y;
    design.demean(&mut y_within);
    let demeaned: Vec<Vec<f64>> = x_cols
        .into_par_iter()
        .map(|mut c| {
            design.demean(&mut c);
            c
        })
        .collect();
    for (j, c) in demeaned.iter().enumerate() {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 1e-10) {
            let name = if has_intercept && j == 0 { "const".to_string() } else { design.terms[j - usize::from(has_intercept)].clone() };
            return Err(PanelError::NoWithinVariation(name));
        }
    }
    let n = y_within.len();
    let k = demeaned.len();
    let x_within = DMatrix::from_fn(n, k, |i, j| demeaned[j][i]);
    if k > 0 {
        design.xtx_inv = Some(gram_inverse(&x_within.tr_mul(&x_within)).map_err(|_| PanelError::SingularDesign)?);
    }
    design.x_within = x_within;
    design.y_within = y_within;
    Ok(design)
}

/// Within-transform OLS with clustered errors.
pub fn fit_panel_fe(panel: &FirmMonthPanel, shocks: Option<&ShockSeries>, spec: &PanelSpec) -> Result<PanelFit, PanelError> {
    build_design(panel, shocks, spec)?.fit()
}

/// One fit per horizon; horizons are estimated in parallel and returned in
/// input order.
pub fn panel_irf_by_horizon(
    panel: &FirmMonthPanel,
    shocks: Option<&ShockSeries>,
    spec: &PanelSpec,
    horizons: &[usize],
) -> Result<Vec<PanelFit>, PanelError> {
    horizons
        .par_iter()
        .map(|&h| {
            let s = PanelSpec { outcome: None, horizon: h, ..spec.clone() };
            fit_panel_fe(panel, shocks, &s)
        })
        .collect()
}

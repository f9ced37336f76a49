//! CSV emission and the summary tables of the `report` stage.

use sentfeed::econometrics::{GeometricFit, IrfEstimate};
use sentfeed::series::Ar1Fit;
use sentfeed::structural::BPS;

/// Normal 97.5% quantile for 95% bands.
const Z95: f64 = 1.959_963_984_540_054;

/// Shortest round-trip decimal; NaN becomes an empty cell.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// An in-memory CSV table.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.w.into_inner().expect("in-memory flush")
    }
}

/// Two-column `key,value` table.
pub fn key_value(pairs: &[(&str, String)]) -> Vec<u8> {
    let mut t = Table::new(&["key", "value"]);
    for (k, v) in pairs {
        t.row([*k, v.as_str()]);
    }
    t.into_bytes()
}

/// One-row calibration table: fitted parameters and the LP peak.
pub fn calibration_table(irf: &IrfEstimate, fit: &GeometricFit) -> Vec<u8> {
    let peak = (0..irf.betas.len()).max_by(|&a, &b| irf.betas[a].abs().total_cmp(&irf.betas[b].abs())).unwrap_or(0);
    let mut t = Table::new(&["kappa_bps", "kappa_se_bps", "rho", "rho_se", "half_life_months", "peak_beta_bps", "peak_horizon", "fit_r2", "method", "convention"]);
    t.row([
        num(fit.kappa_bps),
        fit.kappa_se_bps.map_or_else(String::new, num),
        num(fit.rho),
        fit.rho_se.map_or_else(String::new, num),
        num(fit.half_life),
        num(irf.betas[peak] * BPS),
        irf.horizons[peak].to_string(),
        num(fit.r_squared),
        fit.method.as_str().to_string(),
        fit.convention.as_str().to_string(),
    ]);
    t.into_bytes()
}

/// Horizon against the LP coefficient, its 95% normal band and the fitted
/// geometric response, all in bps.
pub fn irf_figure(irf: &IrfEstimate, fit: &GeometricFit) -> Vec<u8> {
    let mut t = Table::new(&["horizon", "beta_bps", "lower_bps", "upper_bps", "implied_bps"]);
    for (i, &h) in irf.horizons.iter().enumerate() {
        let (b, s) = (irf.betas[i] * BPS, irf.ses[i] * BPS);
        t.row([h.to_string(), num(b), num(b - Z95 * s), num(b + Z95 * s), num(fit.implied_bps(h))]);
    }
    t.into_bytes()
}

pub fn ar1_table(fit: &Ar1Fit) -> Vec<u8> {
    let mut t = Table::new(&["alpha", "phi", "sigma_u", "se_alpha", "se_phi", "se_sigma", "mean_removed", "nobs"]);
    t.row([
        num(fit.alpha),
        num(fit.phi),
        num(fit.sigma_u),
        num(fit.se_alpha),
        num(fit.se_phi),
        num(fit.se_sigma),
        num(fit.demeaned_by),
        fit.residuals.len().to_string(),
    ]);
    t.into_bytes()
}

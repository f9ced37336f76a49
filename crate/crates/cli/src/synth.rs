//! Synthetic inputs for runs without external data.
//!
//! Market returns follow the geometric feedback loop driven by unit-variance
//! innovations `e_t`; the sentiment index is an AR(1) in the same
//! innovations, so its standardised residuals recover `e_t`. Firm returns
//! load on last month's innovation, with an extra loading for firms in the
//! bottom breadth tercile of that month:
//!
//! `r_{i,t} = a_i + m_t + b (1 + x LB_{i,t-1}) e_{t-1} + s z_{i,t}`.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use sentfeed::panel::{FirmMonthPanel, PanelRow, RegimeThresholds};
use sentfeed::rng::{derive_seed, substream, Rng};
use sentfeed::stats;
use sentfeed::structural::{simulate_feedback, FeedbackParams};
use sentfeed::MonthlySeries;

use crate::config::SimulateConfig;
use crate::ingest::Dataset;
use crate::CliError;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synthesize(sim: &SimulateConfig, seed: u64) -> Result<Dataset, CliError> {
    let invalid = |e: &dyn std::fmt::Display| CliError::Validation(format!("simulate: {e}"));
    let params = FeedbackParams { kappa_bps: sim.kappa_bps, rho: sim.rho };
    let path = simulate_feedback(params, sim.months, derive_seed(seed, 0), sim.burn_in, sim.start).map_err(|e| invalid(&e))?;
    let e = path.innovations.values();

    let mut s = 0.0;
    let sentiment: Vec<f64> = e
        .iter()
        .map(|x| {
            s = sim.sentiment_phi * s + x;
            s
        })
        .collect();

    let mut rng = substream(derive_seed(seed, 1), 0);
    let market: Vec<f64> = path.returns.values().iter().map(|r| r + sim.return_noise * normal(&mut rng)).collect();
    let market = MonthlySeries::new(path.returns.start(), market).map_err(|e| invalid(&e))?;

    let panel = synth_panel(sim, e, &market, derive_seed(seed, 2))?;
    Ok(Dataset {
        sentiment: Some(MonthlySeries::new(sim.start, sentiment).map_err(|e| invalid(&e))?),
        market: Some(market),
        panel: Some(panel),
        ..Dataset::default()
    })
}

fn synth_panel(sim: &SimulateConfig, e: &[f64], market: &MonthlySeries, seed: u64) -> Result<FirmMonthPanel, CliError> {
    let mut rng = substream(seed, 0);
    let (n, t_len) = (sim.firms, sim.panel_months);
    let first = sim.months - t_len;
    let vix: Vec<f64> = (0..t_len).map(|_| 20.0 * (0.25 * normal(&mut rng)).exp()).collect();
    let alpha: Vec<f64> = (0..n).map(|_| 0.002 * normal(&mut rng)).collect();
    let optionable: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random::<f64>() < 0.6))).collect();
    let breadth: Vec<Vec<f64>> = (0..t_len).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
    let q = RegimeThresholds::default().breadth_quantile;
    let low: Vec<Vec<bool>> = breadth
        .iter()
        .map(|row| {
            let cut = stats::quantile(row, q);
            row.iter().map(|b| *b <= cut).collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(n * t_len);
    for k in 0..t_len {
        let t = first + k;
        let month = sim.start.offset(t as i64);
        let m_t = market.get(month).unwrap_or(0.0);
        let e_prev = if t > 0 { e[t - 1] } else { 0.0 };
        for i in 0..n {
            let lb = k > 0 && low[k - 1][i];
            let load = sim.firm_beta * (1.0 + sim.low_breadth_extra * f64::from(u8::from(lb)));
            let ret = alpha[i] + m_t + load * e_prev + sim.firm_noise * normal(&mut rng);
            rows.push(PanelRow {
                firm_id: format!("F{i:04}"),
                month,
                ret,
                breadth: breadth[k][i],
                retail: rng.random(),
                optionable: optionable[i],
                me: (0.5 * normal(&mut rng)).exp(),
                vix: vix[k],
                extra: Vec::new(),
            });
        }
    }
    FirmMonthPanel::from_rows(rows, &[]).map_err(|e| CliError::Validation(format!("simulate: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulateConfig {
        SimulateConfig { months: 120, panel_months: 36, firms: 20, ..SimulateConfig::default() }
    }

    #[test]
    fn deterministic_and_aligned() {
        let a = synthesize(&small(), 5).unwrap();
        let b = synthesize(&small(), 5).unwrap();
        assert_eq!(a.market, b.market);
        assert_eq!(a.panel.as_ref().unwrap().column("ret").unwrap(), b.panel.as_ref().unwrap().column("ret").unwrap());
        let s = a.sentiment.unwrap();
        let m = a.market.unwrap();
        assert_eq!(s.len(), 120);
        assert_eq!(m.start(), s.start().offset(1));
        let p = a.panel.unwrap();
        assert_eq!(p.len(), 20 * 36);
        assert_eq!(p.distinct_months().last().copied(), Some(s.end()));
        assert_ne!(synthesize(&small(), 6).unwrap().market, Some(m));
    }
}

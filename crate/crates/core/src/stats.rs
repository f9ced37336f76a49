//! Small descriptive-statistics helpers shared across modules.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with denominator `n - 1`.
pub fn sample_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn sample_sd(x: &[f64]) -> f64 {
    sample_variance(x).sqrt()
}

/// Lag-1 sample autocorrelation.
pub fn autocorr1(x: &[f64]) -> f64 {
    let m = mean(x);
    let num: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    num / den
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of an already sorted
/// slice. Infinite entries are allowed; interpolation involving an infinite
/// endpoint yields that endpoint.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || frac == 0.0 {
        return sorted[lo];
    }
    if sorted[hi].is_infinite() {
        return sorted[hi];
    }
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn median(x: &[f64]) -> f64 {
    quantile(x, 0.5)
}

/// Two-sided normal p-value for a t-statistic.
pub fn normal_two_sided_p(t: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * (1.0 - n.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Upper-tail probability of a chi-square variate.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    let c = ChiSquared::new(dof).expect("positive dof");
    (1.0 - c.cdf(x)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert!((quantile(&v, 0.1) - 2.9).abs() < 1e-12);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 20.0);
        assert_eq!(quantile_sorted(&[1.0, f64::INFINITY], 0.9), f64::INFINITY);
    }

    #[test]
    fn tails() {
        assert!((normal_two_sided_p(1.959964) - 0.05).abs() < 1e-6);
        assert!((chi2_sf(4.0, 1.0) - 0.0455).abs() < 1e-4);
        assert_eq!(chi2_sf(0.0, 1.0), 1.0);
    }
}

//! OLS with Newey-West (Bartlett kernel) covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::EconError;

/// Reciprocal condition number below which a (column-scaled) Gram matrix is
/// treated as singular.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RegressionResult {
    pub coefficients: Vec<f64>,
    /// HAC covariance of the coefficients.
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub nobs: usize,
    pub r_squared: f64,
    pub lag_used: usize,
}

impl RegressionResult {
    pub fn se(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn t_stat(&self, i: usize) -> f64 {
        self.coefficients[i] / self.se(i)
    }
}

/// Long-run covariance `S_0 + sum_l w_l (S_l + S_l')` of the rows of
/// `scores`, with Bartlett weights `w_l = 1 - l/(lag+1)`. Not divided by n.
pub fn hac_long_run_cov(scores: &DMatrix<f64>, lag: usize) -> DMatrix<f64> {
    let n = scores.nrows();
    let mut s = scores.tr_mul(scores);
    for l in 1..=lag.min(n.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let a = scores.rows(l, n - l);
        let b = scores.rows(0, n - l);
        let g = a.tr_mul(&b);
        s += (&g + g.transpose()) * w;
    }
    s
}

/// Inverse of a symmetric positive-definite Gram matrix, or `RankDeficient`
/// when its column-scaled reciprocal condition number is below [`RANK_TOL`].
pub fn gram_inverse(xtx: &DMatrix<f64>) -> Result<DMatrix<f64>, EconError> {
    let k = xtx.nrows();
    let d: Vec<f64> = (0..k).map(|i| xtx[(i, i)]).collect();
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(EconError::RankDeficient);
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| xtx[(i, j)] / (d[i] * d[j]).sqrt());
    let eig = SymmetricEigen::new(scaled.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > RANK_TOL * max) {
        return Err(EconError::RankDeficient);
    }
    let inv_scaled = scaled.cholesky().ok_or(EconError::RankDeficient)?.inverse();
    Ok(DMatrix::from_fn(k, k, |i, j| inv_scaled[(i, j)] / (d[i] * d[j]).sqrt()))
}

/// OLS of `y` on the columns of `x` with a Bartlett-kernel HAC covariance
/// truncated at `lag`. `lag = 0` gives the White (HC0) sandwich.
pub fn ols_hac(y: &[f64], x: &DMatrix<f64>, lag: usize) -> Result<RegressionResult, EconError> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(EconError::DimensionMismatch { rows: n, len: y.len() });
    }
    if n <= k {
        return Err(EconError::TooFewObservations { nobs: n, params: k });
    }
    let yv = DVector::from_column_slice(y);
    let xtx = x.tr_mul(x);
    let inv = gram_inverse(&xtx)?;
    let beta = &inv * x.tr_mul(&yv);
    let resid = &yv - x * &beta;

    let mut scores = x.clone();
    for (i, mut row) in scores.row_iter_mut().enumerate() {
        row *= resid[i];
    }
    let meat = hac_long_run_cov(&scores, lag);
    let mut cov = &inv * meat * &inv;
    cov = (&cov + cov.transpose()) * 0.5;

    let ym = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let r_squared = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };

    Ok(RegressionResult {
        coefficients: beta.iter().copied().collect(),
        covariance: cov,
        residuals: resid.iter().copied().collect(),
        nobs: n,
        r_squared,
        lag_used: lag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::stats;
    use rand_distr::{Distribution, StandardNormal};

    fn design(x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] })
    }

    #[test]
    fn exact_fit_has_zero_covariance() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let r = ols_hac(&y, &design(&x), 4).unwrap();
        assert!((r.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(r.covariance.iter().all(|c| c.abs() < 1e-20));
    }

    #[test]
    fn lag_zero_is_white_sandwich() {
        let mut rng = substream(1, 0);
        let x: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut rng);
                0.5 * v + e * (1.0 + v.abs())
            })
            .collect();
        let xm = design(&x);
        let r = ols_hac(&y, &xm, 0).unwrap();
        // independent HC0 computation: (X'X)^-1 (sum x_i x_i' e_i^2) (X'X)^-1
        let xtx = xm.tr_mul(&xm).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..200 {
            let xi = xm.row(i).transpose();
            meat += &xi * xi.transpose() * r.residuals[i].powi(2);
        }
        let hc0 = &xtx * meat * &xtx;
        for (a, b) in r.covariance.iter().zip(hc0.iter()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn rank_deficiency_detected() {
        let x = DMatrix::from_fn(10, 3, |i, j| if j == 2 { 2.0 * i as f64 } else if j == 1 { i as f64 } else { 1.0 });
        let y = vec![1.0; 10];
        assert!(matches!(ols_hac(&y, &x, 0), Err(EconError::RankDeficient)));
    }

    #[test]
    fn hac_diagonal_nonnegative_for_all_lags() {
        let mut rng = substream(2, 0);
        let x: Vec<f64> = (0..300).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + { let e: f64 = StandardNormal.sample(&mut rng); e }).collect();
        for lag in 0..=24 {
            let r = ols_hac(&y, &design(&x), lag).unwrap();
            assert!(r.covariance[(0, 0)] >= 0.0 && r.covariance[(1, 1)] >= 0.0);
            assert_eq!(r.covariance, r.covariance.transpose());
        }
    }

    #[test]
    fn hac_se_matches_monte_carlo_spread() {
        // y = x + u with x and u both AR(1)(0.7): OLS SEs understate, HAC(12) should not.
        let (n, reps) = (500, 500);
        let mut betas = Vec::new();
        let mut ses = Vec::new();
        for rep in 0..reps {
            let mut rng = substream(77, rep);
            let (mut xs, mut us) = (0.0, 0.0);
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                xs = 0.7 * xs + a;
                us = 0.7 * us + b;
                x.push(xs);
                y.push(xs + us);
            }
            let r = ols_hac(&y, &design(&x), 12).unwrap();
            betas.push(r.coefficients[1]);
            ses.push(r.se(1));
        }
        let mc = stats::sample_sd(&betas);
        let avg = stats::mean(&ses);
        assert!((avg / mc - 1.0).abs() < 0.15, "hac {avg} vs mc {mc}");
    }
}

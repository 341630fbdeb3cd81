//! Closed-form generalized least squares on projected data, and the
//! residual-consistency statistic.
//!
//! After projecting onto the covariance eigenbasis the regression is
//! ordinary least squares with heteroskedastic errors:
//!
//! ```text
//! beta_hat = sum_i x*_i y*_i / lambda_i  /  sum_i (x*_i)^2 / lambda_i
//! se(beta_hat) = (sum_i (x*_i)^2 / lambda_i)^(-1/2)
//! r^T r = sum_i (y*_i - beta x*_i)^2 / lambda_i   ~ chi^2_kappa at true beta
//! ```
//!
//! These serve both as a production code path and as the oracle the MCMC
//! sampler is validated against.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Projected regression data over the first `kappa` basis components.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRegressionData {
    x_star: Vec<f64>,
    y_star: Vec<f64>,
    lambdas: Vec<f64>,
}

impl ProjectedRegressionData {
    /// Requires equal lengths and strictly positive variances. A zero
    /// variance inside the truncation means the truncation was
    /// mis-specified upstream and is rejected rather than skipped.
    pub fn new(x_star: Vec<f64>, y_star: Vec<f64>, lambdas: Vec<f64>) -> Result<Self> {
        if x_star.len() != y_star.len() || x_star.len() != lambdas.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "length mismatch: x*={}, y*={}, lambda={}",
                x_star.len(),
                y_star.len(),
                lambdas.len()
            )));
        }
        if let Some(i) = lambdas.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::NonPositiveVariance { component: i });
        }
        Ok(ProjectedRegressionData { x_star, y_star, lambdas })
    }

    pub fn kappa(&self) -> usize {
        self.x_star.len()
    }

    pub fn x_star(&self) -> &[f64] {
        &self.x_star
    }

    pub fn y_star(&self) -> &[f64] {
        &self.y_star
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `sum_i (x*_i)^2 / lambda_i`, the GLS information about beta.
    pub fn information(&self) -> f64 {
        self.x_star
            .iter()
            .zip(&self.lambdas)
            .map(|(&x, &l)| x * x / l)
            .sum()
    }
}

/// Maximum-likelihood estimate of the scaling coefficient.
pub fn gls_beta(d: &ProjectedRegressionData) -> Result<f64> {
    let denom = d.information();
    if denom <= 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let numer: f64 = d
        .x_star
        .iter()
        .zip(&d.y_star)
        .zip(&d.lambdas)
        .map(|((&x, &y), &l)| x * y / l)
        .sum();
    Ok(numer / denom)
}

/// Standard error of the GLS estimate.
pub fn gls_stderr(d: &ProjectedRegressionData) -> Result<f64> {
    let denom = d.information();
    if denom <= 0.0 {
        return Err(Error::DegenerateSignal);
    }
    Ok(1.0 / libm::sqrt(denom))
}

/// Residual-consistency statistic `sum_i (y*_i - beta x*_i)^2 / lambda_i`.
pub fn residual_statistic(d: &ProjectedRegressionData, beta: f64) -> f64 {
    d.x_star
        .iter()
        .zip(&d.y_star)
        .zip(&d.lambdas)
        .map(|((&x, &y), &l)| {
            let r = y - beta * x;
            r * r / l
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(x: &[f64], y: &[f64], l: &[f64]) -> ProjectedRegressionData {
        ProjectedRegressionData::new(x.to_vec(), y.to_vec(), l.to_vec()).unwrap()
    }

    #[test]
    fn beta_identity_case() {
        let d = data(&[1.0, -2.0, 0.3], &[1.0, -2.0, 0.3], &[0.5, 2.0, 7.0]);
        assert!((gls_beta(&d).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beta_hand_value() {
        let d = data(&[1.0, 2.0], &[2.0, 2.0], &[1.0, 4.0]);
        assert!((gls_beta(&d).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn beta_zero_response() {
        let d = data(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 4.0]);
        assert_eq!(gls_beta(&d).unwrap(), 0.0);
    }

    #[test]
    fn beta_degenerate_signal() {
        let d = data(&[0.0, 0.0], &[1.0, 2.0], &[1.0, 1.0]);
        assert_eq!(gls_beta(&d), Err(Error::DegenerateSignal));
    }

    #[test]
    fn stderr_hand_value() {
        let d = data(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 4.0]);
        assert!((gls_stderr(&d).unwrap() - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stderr_scales_with_sqrt_lambda() {
        let d = data(&[1.0, 2.0, 3.0], &[0.0; 3], &[1.0, 4.0, 2.0]);
        let d4 = data(&[1.0, 2.0, 3.0], &[0.0; 3], &[4.0, 16.0, 8.0]);
        let ratio = gls_stderr(&d4).unwrap() / gls_stderr(&d).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn stderr_ignores_zero_signal_components() {
        let d = data(&[1.0, 2.0], &[0.5, 0.5], &[1.0, 4.0]);
        let extended = data(&[1.0, 2.0, 0.0], &[0.5, 0.5, 9.0], &[1.0, 4.0, 2.0]);
        assert_eq!(gls_stderr(&d).unwrap(), gls_stderr(&extended).unwrap());
    }

    #[test]
    fn residual_zero_at_exact_fit() {
        let d = data(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 3.0]);
        assert_eq!(residual_statistic(&d, 1.0), 0.0);
    }

    #[test]
    fn residual_hand_value() {
        let d = data(&[1.0, 2.0], &[2.0, 2.0], &[1.0, 4.0]);
        assert!((residual_statistic(&d, 1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_lambda() {
        assert_eq!(
            ProjectedRegressionData::new(vec![1.0], vec![1.0], vec![0.0]),
            Err(Error::NonPositiveVariance { component: 0 })
        );
    }

    #[test]
    fn beta_matches_dense_pseudoinverse_oracle() {
        // beta from the projected formula equals x^T C^+ y / x^T C^+ x with
        // a dense pseudo-inverse built from an orthonormal basis.
        use nalgebra::{DMatrix, DVector};
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let n = 8;
        let r = 4;
        // random orthonormal columns via QR
        let m = DMatrix::<f64>::from_fn(n, r, |_, _| rng.gen_range(-1.0..1.0));
        let q = m.qr().q();
        let lambdas: Vec<f64> = (0..r).map(|_| rng.gen_range(0.2..3.0)).collect();
        let x = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::<f64>::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));

        let mut c_plus = DMatrix::<f64>::zeros(n, n);
        for i in 0..r {
            let p = q.column(i);
            c_plus += (1.0 / lambdas[i]) * &p * p.transpose();
        }
        let oracle = (x.transpose() * &c_plus * &y)[(0, 0)]
            / (x.transpose() * &c_plus * &x)[(0, 0)];

        let xs: Vec<f64> = (0..r).map(|i| q.column(i).dot(&x)).collect();
        let ys: Vec<f64> = (0..r).map(|i| q.column(i).dot(&y)).collect();
        let d = ProjectedRegressionData::new(xs, ys, lambdas).unwrap();
        assert!((gls_beta(&d).unwrap() - oracle).abs() < 1e-8);
    }

    proptest! {
        // beta_hat minimizes the residual statistic
        #[test]
        fn beta_minimizes_residual(
            xs in proptest::collection::vec(-5.0f64..5.0, 2..10),
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = xs.len();
            prop_assume!(xs.iter().any(|&x| x.abs() > 1e-6));
            let ys: Vec<f64> = (0..k).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let ls: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..4.0)).collect();
            let d = ProjectedRegressionData::new(xs, ys, ls).unwrap();
            let bh = gls_beta(&d).unwrap();
            let at_min = residual_statistic(&d, bh);
            // derivative vanishes at the minimum
            let h = 1e-5;
            let deriv = (residual_statistic(&d, bh + h) - residual_statistic(&d, bh - h)) / (2.0 * h);
            prop_assert!(deriv.abs() < 1e-6 * (1.0 + at_min));
            for db in [-1.0, -0.1, 0.1, 1.0] {
                prop_assert!(at_min <= residual_statistic(&d, bh + db) + 1e-12);
            }
        }
    }
}

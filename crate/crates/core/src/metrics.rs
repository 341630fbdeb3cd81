//! Forecast-verification metrics and detection/attribution statistics.


use crate::error::{Error, Result};

/// One-sided detection threshold `z_{1-0.05}`: a posterior mean more than
/// this many posterior standard deviations above zero counts as detected
/// at the 5% level.
pub const DETECTION_Z: f64 = 1.64;

/// Two-sided attribution threshold `z_{0.05/2}`.
pub const ATTRIBUTION_Z: f64 = 1.96;

/// Fraction of credible intervals containing the known truth.
pub fn coverage_rate(contains: &[bool]) -> Result<f64> {
    if contains.is_empty() {
        return Err(Error::InvalidArgument("coverage over empty record set".into()));
    }
    Ok(contains.iter().filter(|&&c| c).count() as f64 / contains.len() as f64)
}

/// Root-mean-square error of posterior means against a known truth.
pub fn rmse(means: &[f64], truth: f64) -> Result<f64> {
    if means.is_empty() {
        return Err(Error::InvalidArgument("rmse over empty record set".into()));
    }
    let ss: f64 = means.iter().map(|&m| (m - truth) * (m - truth)).sum();
    Ok(libm::sqrt(ss / means.len() as f64))
}

/// Empirical-ensemble continuous ranked probability score:
/// `(1/M) sum |s_j - truth| - (1/(2 M^2)) sum sum |s_j - s_k|`.
pub fn crps(samples: &[f64], truth: f64) -> Result<f64> {
    let m = samples.len();
    if m == 0 {
        return Err(Error::InvalidArgument("CRPS of an empty sample".into()));
    }
    let mae: f64 = samples.iter().map(|&s| (s - truth).abs()).sum::<f64>() / m as f64;
    // The pairwise term via sorted prefix sums: for sorted s,
    // sum_{j<k} (s_k - s_j) = sum_k s_k (2k + 1 - m).
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let pair_sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &s)| s * (2.0 * k as f64 + 1.0 - m as f64))
        .sum();
    Ok(mae - pair_sum / (m as f64 * m as f64))
}

/// Equal-tailed sample quantile with linear interpolation between order
/// statistics.
pub fn quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(alloc::format!("quantile level {p} outside [0,1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = libm::ceil(h) as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Equal-tailed credible interval at the given level, e.g. the 5th/95th
/// percentiles for level 0.90.
pub fn credible_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "credible level {level} outside (0,1)"
        )));
    }
    let tail = (1.0 - level) / 2.0;
    Ok((quantile(samples, tail)?, quantile(samples, 1.0 - tail)?))
}

/// Detection statistic `beta_postmean / sigma_post`: the distance in
/// posterior standard deviations between the posterior mean and zero.
pub fn detection_statistic(beta_mean: f64, beta_sd: f64) -> Result<f64> {
    if !(beta_sd > 0.0) {
        return Err(Error::InvalidArgument("zero posterior standard deviation".into()));
    }
    Ok(beta_mean / beta_sd)
}

/// Attribution statistic `|1 - beta_postmean| / sigma_post`.
pub fn attribution_statistic(beta_mean: f64, beta_sd: f64) -> Result<f64> {
    if !(beta_sd > 0.0) {
        return Err(Error::InvalidArgument("zero posterior standard deviation".into()));
    }
    Ok((1.0 - beta_mean).abs() / beta_sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coverage_all_none_partial() {
        assert_eq!(coverage_rate(&[true; 5]).unwrap(), 1.0);
        assert_eq!(coverage_rate(&[false; 5]).unwrap(), 0.0);
        let mut v = vec![true; 9];
        v.push(false);
        assert!((coverage_rate(&v).unwrap() - 0.9).abs() < 1e-15);
        assert!(coverage_rate(&[]).is_err());
    }

    #[test]
    fn rmse_hand_values() {
        assert_eq!(rmse(&[1.0, 1.0, 1.0], 1.0).unwrap(), 0.0);
        assert!((rmse(&[0.9, 1.1], 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((rmse(&[1.5], 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn crps_hand_values() {
        assert_eq!(crps(&[1.0, 1.0, 1.0], 1.0).unwrap(), 0.0);
        // samples {0, 2}, truth 1: (1/2)(1+1) - (1/8)(0+2+2+0) = 0.5
        assert!((crps(&[0.0, 2.0], 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(crps(&[], 1.0).is_err());
    }

    #[test]
    fn crps_matches_cdf_quadrature() {
        // integral of (F(t) - 1{t >= truth})^2 dt on a 5-sample case
        let samples = [0.3, -1.2, 2.0, 0.9, 0.35];
        let truth = 0.5;
        let lo = -10.0;
        let hi = 10.0;
        let n = 4_000_000;
        let dt = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let t = lo + (i as f64 + 0.5) * dt;
            let f = samples.iter().filter(|&&s| s <= t).count() as f64 / samples.len() as f64;
            let h = if t >= truth { 1.0 } else { 0.0 };
            integral += (f - h) * (f - h) * dt;
        }
        assert!((crps(&samples, truth).unwrap() - integral).abs() < 1e-6);
    }

    #[test]
    fn detection_attribution_boundaries() {
        assert_eq!(detection_statistic(0.0, 1.0).unwrap(), 0.0);
        let d = detection_statistic(3.28, 2.0).unwrap();
        assert!((d - DETECTION_Z).abs() < 1e-12);
        assert_eq!(attribution_statistic(1.0, 0.5).unwrap(), 0.0);
        let a = attribution_statistic(0.02, 0.5).unwrap();
        assert!((a - ATTRIBUTION_Z).abs() < 1e-12);
        assert!(detection_statistic(1.0, 0.0).is_err());
        assert!(attribution_statistic(1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_interpolates_order_statistics() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&s, 1.0).unwrap(), 4.0);
        assert!((quantile(&s, 0.5).unwrap() - 2.5).abs() < 1e-15);
        let (lo, hi) = credible_interval(&s, 0.90).unwrap();
        assert!((lo - 1.15).abs() < 1e-12);
        assert!((hi - 3.85).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn crps_permutation_invariant_and_bounded_by_mae(
            mut samples in proptest::collection::vec(-5.0f64..5.0, 1..40),
            truth in -3.0f64..3.0,
        ) {
            let a = crps(&samples, truth).unwrap();
            samples.reverse();
            let b = crps(&samples, truth).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            let mae = samples.iter().map(|&s| (s - truth).abs()).sum::<f64>()
                / samples.len() as f64;
            prop_assert!(a <= mae + 1e-12);
            prop_assert!(a >= -1e-12);
        }
    }
}

//! Aggregation statistics: interquartile means, percentile bootstrap
//! confidence intervals, and exact binomial intervals for wrapper tests.

use crate::error::{FbmError, Result};
use crate::rng::Rng;

/// Interquartile mean: sort, drop floor(n/4) values from each end, average
/// the rest. Fewer than 4 values fall back to the plain mean.
pub fn iqm(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(FbmError::contract("IQM of an empty list"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n < 4 {
        return Ok(sorted.iter().sum::<f64>() / n as f64);
    }
    let drop = n / 4;
    let kept = &sorted[drop..n - drop];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

fn percentile_nearest(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// Percentile bootstrap of the IQM statistic. The interval is clamped to
/// contain the point estimate.
pub fn bootstrap_ci(
    scores: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut Rng,
) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(FbmError::contract("bootstrap of an empty list"));
    }
    let point = iqm(scores)?;
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; scores.len()];
    for _ in 0..resamples {
        for v in buf.iter_mut() {
            *v = scores[rng.below(scores.len())];
        }
        stats.push(iqm(&buf)?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 1.0 - level;
    let lo = percentile_nearest(&stats, alpha / 2.0);
    let hi = percentile_nearest(&stats, 1.0 - alpha / 2.0);
    Ok((lo.min(point), hi.max(point)))
}

/// ln Gamma(x) by the Lanczos approximation, good to ~1e-13 for x > 0.
pub fn lgamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - lgamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn binomial_log_pmf(n: u64, k: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if p == 1.0 {
        return if k == n { 0.0 } else { f64::NEG_INFINITY };
    }
    lgamma(n as f64 + 1.0) - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)
        + k as f64 * p.ln()
        + (n - k) as f64 * (1.0 - p).ln()
}

/// Exact equal-tailed binomial interval on counts: the smallest k with
/// CDF(k) >= alpha/2 and the smallest k with CDF(k) >= 1 - alpha/2.
pub fn binomial_count_interval(n: u64, p: f64, level: f64) -> (u64, u64) {
    let alpha = 1.0 - level;
    let mut cdf = 0.0;
    let mut lo = None;
    let mut hi = None;
    for k in 0..=n {
        cdf += binomial_log_pmf(n, k, p).exp();
        if lo.is_none() && cdf >= alpha / 2.0 {
            lo = Some(k);
        }
        if hi.is_none() && cdf >= 1.0 - alpha / 2.0 {
            hi = Some(k);
            break;
        }
    }
    (lo.unwrap_or(0), hi.unwrap_or(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iqm_of_one_to_twenty_is_ten_and_a_half() {
        let scores: Vec<f64> = (1..=20).map(|v| v as f64).collect();
        assert_eq!(iqm(&scores).unwrap(), 10.5);
    }

    #[test]
    fn iqm_of_constants_is_the_constant() {
        assert_eq!(iqm(&[3.25; 11]).unwrap(), 3.25);
    }

    #[test]
    fn iqm_is_permutation_invariant_and_bounded() {
        let mut rng = Rng::from_seed(3);
        for _ in 0..200 {
            let n = 1 + rng.below(30);
            let xs: Vec<f64> = (0..n).map(|_| rng.normal() * 10.0).collect();
            let base = iqm(&xs).unwrap();
            let mut shuffled = xs.clone();
            // Fisher-Yates
            for i in (1..shuffled.len()).rev() {
                let j = rng.below(i + 1);
                shuffled.swap(i, j);
            }
            assert_eq!(iqm(&shuffled).unwrap(), base);
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(base >= lo - 1e-12 && base <= hi + 1e-12);
        }
    }

    #[test]
    fn iqm_below_four_is_plain_mean() {
        assert_eq!(iqm(&[1.0, 2.0]).unwrap(), 1.5);
        assert_eq!(iqm(&[1.0, 2.0, 6.0]).unwrap(), 3.0);
    }

    #[test]
    fn empty_iqm_is_an_error() {
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn bootstrap_of_constants_collapses() {
        let mut rng = Rng::from_seed(1);
        let (lo, hi) = bootstrap_ci(&[2.5; 12], 500, 0.95, &mut rng).unwrap();
        assert_eq!(lo, 2.5);
        assert_eq!(hi, 2.5);
    }

    #[test]
    fn bootstrap_contains_the_point_estimate() {
        let mut rng = Rng::from_seed(2);
        for seed in 0..20 {
            let mut data_rng = Rng::from_seed(seed);
            let xs: Vec<f64> = (0..10).map(|_| data_rng.normal() * 3.0).collect();
            let point = iqm(&xs).unwrap();
            let (lo, hi) = bootstrap_ci(&xs, 300, 0.95, &mut rng).unwrap();
            assert!(lo <= point && point <= hi);
        }
    }

    #[test]
    fn bootstrap_width_shrinks_with_sample_size() {
        // n = 100 intervals are narrower than n = 10 on the same distribution,
        // averaged over 20 trials
        let mut rng = Rng::from_seed(5);
        let mut width_small = 0.0;
        let mut width_large = 0.0;
        for trial in 0..20 {
            let mut data_rng = Rng::from_seed(100 + trial);
            let small: Vec<f64> = (0..10).map(|_| data_rng.normal()).collect();
            let large: Vec<f64> = (0..100).map(|_| data_rng.normal()).collect();
            let (lo_s, hi_s) = bootstrap_ci(&small, 400, 0.95, &mut rng).unwrap();
            let (lo_l, hi_l) = bootstrap_ci(&large, 400, 0.95, &mut rng).unwrap();
            width_small += hi_s - lo_s;
            width_large += hi_l - lo_l;
        }
        assert!(
            width_large < width_small,
            "large-n width {width_large} should beat small-n width {width_small}"
        );
    }

    #[test]
    fn lgamma_matches_factorials() {
        for n in 1..15u64 {
            let fact: f64 = (1..n).map(|k| k as f64).product();
            assert!((lgamma(n as f64) - fact.ln()).abs() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn binomial_interval_covers_the_mean() {
        let (lo, hi) = binomial_count_interval(10_000, 0.2, 0.99);
        assert!(lo < 2000 && 2000 < hi);
        // interval is reasonably tight: ~2.58 sigma with sigma = 40
        assert!((lo as f64 - (2000.0 - 2.58 * 40.0)).abs() < 15.0, "lo {lo}");
        assert!((hi as f64 - (2000.0 + 2.58 * 40.0)).abs() < 15.0, "hi {hi}");
    }

    #[test]
    fn flicker_rate_lies_in_exact_binomial_interval() {
        use crate::envgen::{observe, MarkovState, OcclusionConfig, OcclusionMode, Routing};
        let p = 0.2;
        let occl =
            OcclusionConfig::new(OcclusionMode::Flickering { p }, Routing::All).unwrap();
        let state = MarkovState::new(vec![1.0, -1.0, 0.5]);
        let n = 10_000u64;
        let mut rng = Rng::from_seed(77);
        let mut drops = 0u64;
        for _ in 0..n {
            if observe(&state, &occl, &mut rng).dropped {
                drops += 1;
            }
        }
        let (lo, hi) = binomial_count_interval(n, p, 0.99);
        assert!(
            (lo..=hi).contains(&drops),
            "drop count {drops} outside [{lo}, {hi}]"
        );
    }
}

use serde::Serialize;
use statrs::function::erf::erfc;

use super::EstimatorError;

/// Posts needed at second 0 before the test is attempted.
pub const MIN_ZEROTH_POSTS: usize = 30;

/// Counts per second of the minute.
pub fn second_of_minute_histogram(times: impl IntoIterator<Item = u64>) -> [u64; 60] {
    let mut hist = [0u64; 60];
    for t in times {
        hist[(t % 60) as usize] += 1;
    }
    hist
}

/// `hist[0]` over the mean of the other 59 seconds.
pub fn second_zero_ratio(hist: &[u64; 60]) -> f64 {
    let others: u64 = hist[1..].iter().sum();
    hist[0] as f64 / (others as f64 / 59.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZerothSecond {
    pub spike_ratio: f64,
    pub n_zero: usize,
    pub n_other: usize,
    pub mean_views_zero: f64,
    pub mean_views_other: f64,
    /// Two-sided Mann–Whitney U p-value for views at second 0 vs. elsewhere.
    pub p_value: f64,
}

/// Compare posts whose metadata create time falls on second 0 of a minute
/// against all others. Input is `(metadata create time, view count)`.
pub fn zeroth_second_analysis(posts: &[(u64, u64)]) -> Result<ZerothSecond, EstimatorError> {
    let hist = second_of_minute_histogram(posts.iter().map(|p| p.0));
    let (zero, other): (Vec<f64>, Vec<f64>) = {
        let mut z = Vec::new();
        let mut o = Vec::new();
        for &(t, v) in posts {
            if t % 60 == 0 { z.push(v as f64) } else { o.push(v as f64) }
        }
        (z, o)
    };
    if zero.len() < MIN_ZEROTH_POSTS || other.is_empty() {
        return Err(EstimatorError::InsufficientData { needed: MIN_ZEROTH_POSTS, found: zero.len() });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(ZerothSecond {
        spike_ratio: second_zero_ratio(&hist),
        n_zero: zero.len(),
        n_other: other.len(),
        mean_views_zero: mean(&zero),
        mean_views_other: mean(&other),
        p_value: mann_whitney_u(&zero, &other).p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Two-sided Mann–Whitney U test, normal approximation with tie correction
/// and continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> MannWhitney {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let mut pooled: Vec<(f64, bool)> = a.iter().map(|&x| (x, true)).chain(b.iter().map(|&x| (x, false))).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    let n = pooled.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg = (i + 1 + j) as f64 / 2.0;
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        rank_sum_a += avg * pooled[i..j].iter().filter(|p| p.1).count() as f64;
        i = j;
    }
    let u = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;
    let nf = n as f64;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if !(var > 0.0) {
        return MannWhitney { u, z: 0.0, p_value: 1.0 };
    }
    let diff = u - mu;
    let corrected = (diff.abs() - 0.5).max(0.0) * diff.signum();
    let z = corrected / var.sqrt();
    MannWhitney { u, z, p_value: erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mann_whitney_separated_samples() {
        // U = 0, mu = 4.5, var = 9*7/12 = 5.25, z = -4/sqrt(5.25).
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        assert_eq!(r.u, 0.0);
        assert!((r.z + 4.0 / 5.25f64.sqrt()).abs() < 1e-12);
        assert!((r.p_value - 0.080856).abs() < 1e-5, "{}", r.p_value);
    }

    #[test]
    fn mann_whitney_with_ties() {
        // Pooled 1,2,2,3 with a = [1,2], b = [2,3]: ranks 1, 2.5, 2.5, 4.
        // R_a = 3.5, U = 0.5, var = 4/12 * (5 - 6/12) = 1.5.
        let r = mann_whitney_u(&[1.0, 2.0], &[2.0, 3.0]);
        assert_eq!(r.u, 0.5);
        assert!((r.z + 1.0 / 1.5f64.sqrt()).abs() < 1e-12);
        assert!((r.p_value - erfc(1.0 / 1.5f64.sqrt() / std::f64::consts::SQRT_2)).abs() < 1e-12);
    }

    #[test]
    fn identical_values_are_not_significant() {
        assert_eq!(mann_whitney_u(&[5.0; 10], &[5.0; 20]).p_value, 1.0);
    }

    #[test]
    fn flat_seconds_identical_views() {
        let posts: Vec<(u64, u64)> = (0..6000u64).map(|i| (i, 10)).collect();
        let r = zeroth_second_analysis(&posts).unwrap();
        assert_eq!(r.spike_ratio, 1.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.n_zero, 100);
    }

    #[test]
    fn spike_ratio_by_construction() {
        let mut hist = [100u64; 60];
        hist[0] = 114;
        assert!((second_zero_ratio(&hist) - 1.14).abs() < 1e-12);
    }

    #[test]
    fn too_few_zeroth_posts() {
        let posts: Vec<(u64, u64)> = (0..600u64).map(|i| (i, 1)).collect();
        assert!(matches!(
            zeroth_second_analysis(&posts),
            Err(EstimatorError::InsufficientData { needed: 30, found: 10 })
        ));
    }
}

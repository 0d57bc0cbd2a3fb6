use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EstimatorError;

/// Floor applied to bootstrapped precision and recall.
pub const RATE_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceInput {
    /// Share of the deployment sample the classifier flagged.
    pub observed_positive_rate: f64,
    pub sample_n: u64,
    pub precision: f64,
    pub recall: f64,
    /// Size of the labelled set precision and recall were measured on.
    pub test_set_n: u64,
    /// How representative the labelled set is, in (0, 1].
    pub data_quality_index: f64,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default)]
    pub seed: u64,
    /// Bias standard deviation at data quality 0.
    #[serde(default = "default_bias_scale")]
    pub bias_scale: f64,
}

fn default_bootstrap() -> usize {
    2000
}

fn default_bias_scale() -> f64 {
    0.2
}

impl PrevalenceInput {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::InvalidRates(m.to_string()));
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !(0.0..=1.0).contains(&self.observed_positive_rate) {
            return bad("observed_positive_rate must be in [0, 1]");
        }
        if !unit(self.precision) || !unit(self.recall) {
            return bad("precision and recall must be in (0, 1]");
        }
        if !unit(self.data_quality_index) {
            return bad("data_quality_index must be in (0, 1]");
        }
        if self.sample_n == 0 || self.test_set_n == 0 {
            return bad("sample_n and test_set_n must be positive");
        }
        if self.n_bootstrap < 100 {
            return bad("n_bootstrap must be at least 100");
        }
        if !(self.bias_scale >= 0.0) {
            return bad("bias_scale must be non-negative");
        }
        Ok(())
    }

    /// Effective labelled-set size after the design effect `1/rho^2`.
    pub fn n_eff(&self) -> f64 {
        self.test_set_n as f64 * self.data_quality_index * self.data_quality_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrevalenceCI {
    /// Median of the bootstrap distribution.
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub n_eff: f64,
    /// The classifier's raw positive rate.
    pub raw: f64,
    /// `raw * precision / recall` without resampling.
    pub corrected: f64,
}

/// Beta draw centred on `rate` with `n` pseudo-observations; degenerate when
/// the rate is exactly 1.
fn beta_around(rate: f64, n: f64, rng: &mut ChaCha8Rng) -> f64 {
    let (a, b) = (rate * n, (1.0 - rate) * n);
    match Beta::new(a, b) {
        Ok(d) if b > 0.0 => d.sample(rng),
        _ => rate,
    }
}

fn one_iteration(input: &PrevalenceInput, i: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    rng.set_stream(i as u64);
    let n_eff = input.n_eff();
    let mut prec = beta_around(input.precision, n_eff, &mut rng);
    let mut rec = beta_around(input.recall, n_eff, &mut rng);
    let sd = input.bias_scale * (1.0 - input.data_quality_index);
    if sd > 0.0 {
        let noise = Normal::new(0.0, sd).expect("positive sd");
        prec += noise.sample(&mut rng);
        rec += noise.sample(&mut rng);
    }
    let prec = prec.clamp(RATE_FLOOR, 1.0);
    let rec = rec.clamp(RATE_FLOOR, 1.0);
    let pi = (input.observed_positive_rate * prec / rec).clamp(0.0, 1.0);
    let flagged = Binomial::new(input.sample_n, pi).expect("probability in [0,1]").sample(&mut rng);
    flagged as f64 / input.sample_n as f64
}

/// Bootstrap the corrected prevalence. Iteration `i` uses its own stream of
/// `seed`, so results do not depend on how iterations are spread over threads.
pub fn prevalence_ci(input: &PrevalenceInput) -> Result<PrevalenceCI, EstimatorError> {
    input.validate()?;
    let n = input.n_bootstrap;
    let threads = thread::available_parallelism().map_or(1, |p| p.get()).min(n);
    let chunk = n.div_ceil(threads);
    let mut draws: Vec<f64> = thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| s.spawn(move || (t * chunk..((t + 1) * chunk).min(n)).map(|i| one_iteration(input, i)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("bootstrap worker panicked")).collect()
    });
    draws.sort_by(f64::total_cmp);
    Ok(PrevalenceCI {
        point: percentile(&draws, 50.0),
        lower: percentile(&draws, 2.5),
        upper: percentile(&draws, 97.5),
        n_eff: input.n_eff(),
        raw: input.observed_positive_rate,
        corrected: (input.observed_positive_rate * input.precision / input.recall).min(1.0),
    })
}

/// Linear-interpolation percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

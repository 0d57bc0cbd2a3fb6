//! Per-bit logistic regression used to measure how predictable each
//! non-timestamp bit is from the others.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Full-batch gradient descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Every n-th sample (by corpus position) is held out for scoring.
    pub holdout_every: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 500,
            seed: 0,
            holdout_every: 5,
        }
    }
}

/// Dense ±1 design matrix, one row per sample.
pub(crate) struct BitMatrix {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f32>,
}

impl BitMatrix {
    /// Columns are the `cols` lowest bits of each value, MSB-first.
    pub fn from_values(values: &[u64], cols: usize) -> Self {
        let mut data = Vec::with_capacity(values.len() * cols);
        for &v in values {
            for c in 0..cols {
                let bit = (v >> (cols - 1 - c)) & 1;
                data.push(if bit == 1 { 1.0 } else { -1.0 });
            }
        }
        Self { rows: values.len(), cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column_is_constant(&self, c: usize) -> bool {
        let first = self.data[c];
        (0..self.rows).all(|r| self.data[r * self.cols + c] == first)
    }
}

pub(crate) struct FittedBit {
    /// Rescaled balanced accuracy in [0, 1].
    pub score: f64,
    /// Absolute fitted weight per column; the target column is 0.
    pub coefficient_magnitudes: Vec<f64>,
}

/// Dot product with independent lane accumulators so it vectorizes.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            lanes[i] += xa[i] * xb[i];
        }
    }
    lanes.iter().sum::<f32>() + tail
}

#[inline]
fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

/// Fit a regressor predicting column `target` from every other column.
pub(crate) fn fit_bit(matrix: &BitMatrix, target: usize, params: &TrainingParams) -> FittedBit {
    let cols = matrix.cols;
    let every = params.holdout_every.max(2);
    let is_holdout = |r: usize| r % every == every - 1;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (target as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut weights: Vec<f32> = (0..cols).map(|_| rng.random_range(-0.01..0.01)).collect();
    weights[target] = 0.0;
    let mut bias = 0.0f32;

    let train: Vec<usize> = (0..matrix.rows).filter(|&r| !is_holdout(r)).collect();
    let train = if train.is_empty() { (0..matrix.rows).collect() } else { train };
    let n = train.len() as f32;
    let lr = params.learning_rate as f32;

    let mut grad = vec![0.0f32; cols];
    for _ in 0..params.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_bias = 0.0f32;
        for &r in &train {
            let row = matrix.row(r);
            let y = if row[target] > 0.0 { 1.0 } else { 0.0 };
            let z = bias + dot(row, &weights);
            let err = sigmoid(z) - y;
            grad_bias += err;
            for (g, x) in grad.iter_mut().zip(row) {
                *g += err * x;
            }
        }
        bias -= lr * grad_bias / n;
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= lr * g / n;
        }
        weights[target] = 0.0;
    }

    let holdout: Vec<usize> = (0..matrix.rows).filter(|&r| is_holdout(r)).collect();
    let score = rescaled_balanced_accuracy(matrix, target, &weights, bias, &holdout)
        .or_else(|| {
            let all: Vec<usize> = (0..matrix.rows).collect();
            rescaled_balanced_accuracy(matrix, target, &weights, bias, &all)
        })
        .unwrap_or(0.0);

    FittedBit {
        score,
        coefficient_magnitudes: weights.iter().map(|w| w.abs() as f64).collect(),
    }
}

/// `(bacc - 0.5) / 0.5`, clamped to `[0, 1]`. A majority-class predictor has
/// balanced accuracy 0.5 regardless of class balance. `None` when `rows`
/// does not contain both classes.
fn rescaled_balanced_accuracy(
    matrix: &BitMatrix,
    target: usize,
    weights: &[f32],
    bias: f32,
    rows: &[usize],
) -> Option<f64> {
    let (mut tp, mut pos, mut tn, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for &r in rows {
        let row = matrix.row(r);
        let z = bias + dot(row, weights);
        let predicted = z > 0.0;
        if row[target] > 0.0 {
            pos += 1;
            tp += predicted as u64;
        } else {
            neg += 1;
            tn += !predicted as u64;
        }
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    let bacc = 0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64);
    Some(((bacc - 0.5) / 0.5).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_a_copied_bit() {
        // Column 0 always equals column 1; column 2 is noise.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<u64> = (0..2000)
            .map(|_| {
                let b: u64 = rng.random_range(0..2);
                let noise: u64 = rng.random_range(0..2);
                (b << 2) | (b << 1) | noise
            })
            .collect();
        let m = BitMatrix::from_values(&values, 3);
        let fit = fit_bit(&m, 0, &TrainingParams::default());
        assert!(fit.score > 0.99, "{}", fit.score);
        assert!(fit.coefficient_magnitudes[1] > fit.coefficient_magnitudes[2]);
        assert_eq!(fit.coefficient_magnitudes[0], 0.0);
        let noise = fit_bit(&m, 2, &TrainingParams::default());
        assert!(noise.score < 0.1, "{}", noise.score);
    }

    #[test]
    fn matrix_encoding_is_msb_first() {
        let m = BitMatrix::from_values(&[0b100], 3);
        assert_eq!(m.row(0), &[1.0, -1.0, -1.0]);
        assert!(m.column_is_constant(0));
    }
}

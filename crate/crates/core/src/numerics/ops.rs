use super::{Matrix, Rng};
use crate::error::{ensure, Result};

/// Elementwise rectifier.
pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// `log Σ exp(x_i)`, shifted by the maximum so large logits do not overflow.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    ensure!(!logits.is_empty(), "log-sum-exp of an empty vector");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    ensure!(!logits.is_empty(), "softmax of an empty vector");
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Negative log-likelihood of `label` under `softmax(logits)`, and its
/// gradient with respect to the logits (`softmax - onehot`).
pub fn cross_entropy_from_logits(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    ensure!(
        label < logits.len(),
        "label {label} out of range for {} classes",
        logits.len()
    );
    let loss = log_sum_exp(logits)? - logits[label];
    let mut grad = softmax(logits)?;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// `rows x cols` matrix drawn i.i.d. from `U[-L, L]` with
/// `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(
    rng: &mut Rng,
    fan_in: usize,
    fan_out: usize,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    ensure!(
        fan_in >= 1 && fan_out >= 1,
        "glorot fans must be positive (got fan_in={fan_in}, fan_out={fan_out})"
    );
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_in(-limit, limit))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Inverted-dropout mask: each element is `0` or `1 / keep_probability`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep_probability: f64,
    mask: Vec<f64>,
}

impl DropoutMask {
    /// A mask that keeps everything; applying it is the identity.
    pub fn keep_all(len: usize) -> Self {
        Self {
            keep_probability: 1.0,
            mask: vec![1.0; len],
        }
    }

    pub fn keep_probability(&self) -> f64 {
        self.keep_probability
    }

    pub fn values(&self) -> &[f64] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.mask.len(),
            "dropout mask of length {} applied to {} values",
            self.mask.len(),
            x.len()
        );
        Ok(x.iter().zip(&self.mask).map(|(a, m)| a * m).collect())
    }
}

pub fn sample_dropout_mask(rng: &mut Rng, len: usize, keep_probability: f64) -> Result<DropoutMask> {
    ensure!(
        keep_probability > 0.0 && keep_probability <= 1.0,
        "keep probability must be in (0, 1], got {keep_probability}"
    );
    let scale = 1.0 / keep_probability;
    let mask = (0..len)
        .map(|_| if rng.uniform() < keep_probability { scale } else { 0.0 })
        .collect();
    Ok(DropoutMask {
        keep_probability,
        mask,
    })
}

//! Built-in verification suites run by `din selftest`: naive-loop oracles for
//! the forward pass and central finite differences for every gradient.

use rand::RngCore;

use crate::denseimage::{DenseImage, FrameFeatureSequence};
use crate::error::Result;
use crate::model::{ModelParams, ModelShape};
use crate::numerics::{
    central_difference, cross_entropy_from_logits, relative_error, softmax, Matrix, Rng, StreamFamily,
};
use crate::temporal_conv::{multiscale_forward, TemporalFilterBank};

/// Gradient checks reject instances closer than this to a rectifier kink or
/// a max-pool tie.
pub const KINK_MARGIN: f64 = 1e-3;
pub const GRAD_EPS: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    /// Worst observed error against the oracle.
    pub worst: f64,
}

impl SuiteResult {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfTestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelfTestReport {
    pub fn passed(&self) -> usize {
        self.suites.iter().map(|s| s.passed).sum()
    }

    pub fn failed(&self) -> usize {
        self.suites.iter().map(|s| s.failed).sum()
    }

    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(SuiteResult::ok)
    }
}

/// Pre-activations of one width computed with explicit loops:
/// `z[m][i] = b[m] + sum_{j<h} sum_c W[m][j*k + c] * X[i+j][c]`.
pub fn naive_preactivations(x: &Matrix, weights: &Matrix, bias: &[f64]) -> Vec<Vec<f64>> {
    let (n, k) = (x.rows(), x.cols());
    let h = weights.cols() / k;
    (0..weights.rows())
        .map(|m| {
            (0..=n - h)
                .map(|i| {
                    let mut acc = bias[m];
                    for j in 0..h {
                        for c in 0..k {
                            acc += weights.get(m, j * k + c) * x.get(i + j, c);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Pooled features of every width from explicit loops.
pub fn naive_multiscale(x: &Matrix, bank: &TemporalFilterBank) -> Vec<Vec<f64>> {
    bank.weights
        .iter()
        .enumerate()
        .map(|(s, w)| {
            naive_preactivations(x, w, bank.bias(s))
                .iter()
                .map(|row| row.iter().fold(0.0_f64, |acc, &z| acc.max(z)))
                .collect()
        })
        .collect()
}

/// Distance of the instance from the nearest rectifier kink or pooling tie.
/// Ties are only measured for channels whose maximum is positive.
pub fn kink_margin(x: &Matrix, bank: &TemporalFilterBank) -> f64 {
    let mut margin = f64::INFINITY;
    for (s, w) in bank.weights.iter().enumerate() {
        for row in naive_preactivations(x, w, bank.bias(s)) {
            for &z in &row {
                margin = margin.min(z.abs());
            }
            let mut sorted = row.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            if sorted[0] > 0.0 && sorted.len() > 1 {
                margin = margin.min(sorted[0] - sorted[1]);
            }
        }
    }
    margin
}

fn loss_at(params: &ModelParams, seq: &FrameFeatureSequence, indices: &[usize], label: usize) -> f64 {
    let pass = params
        .forward_indices(seq, indices.to_vec(), None)
        .expect("shapes were validated before checking");
    cross_entropy_from_logits(&pass.scores.fused_logits, label)
        .expect("label is in range")
        .0
}

/// Outcome of a finite-difference comparison on one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub scalars: usize,
    pub mismatches: usize,
    pub worst: f64,
}

/// Compares every analytic parameter gradient of the loss with a central
/// difference, using identity frame selection and no dropout.
pub fn check_model_gradients(params: &ModelParams, seq: &FrameFeatureSequence, label: usize, eps: f64, tol: f64) -> Result<GradCheck> {
    let indices: Vec<usize> = (0..params.shape().segments).collect();
    let pass = params.forward_indices(seq, indices.clone(), None)?;
    let (_, grads) = params.loss_and_grads(seq, &pass, label)?;

    let mut probe = params.clone();
    let mut out = GradCheck {
        scalars: 0,
        mismatches: 0,
        worst: 0.0,
    };
    let tensor_count = grads.tensors().len();
    for t in 0..tensor_count {
        let analytic: Vec<f64> = grads.tensors()[t].value.as_slice().to_vec();
        for (idx, &a) in analytic.iter().enumerate() {
            let mut values = probe.tensors()[t].value.as_slice().to_vec();
            let numeric = central_difference(&mut values, idx, eps, |v| {
                probe.tensors_mut()[t].value.as_mut_slice().copy_from_slice(v);
                loss_at(&probe, seq, &indices, label)
            });
            probe.tensors_mut()[t].value.as_mut_slice().copy_from_slice(&values);
            let err = relative_error(a, numeric);
            out.scalars += 1;
            out.worst = out.worst.max(err);
            if err > tol {
                out.mismatches += 1;
            }
        }
    }
    Ok(out)
}

/// Shape used by the gradient suite: n=5, k=3, M=4, H={2,3}, C=3.
pub fn gradient_check_shape() -> ModelShape {
    ModelShape {
        input_dim: 4,
        reduced_dim: 3,
        segments: 5,
        widths: vec![2, 3],
        channels: 4,
        classes: 3,
    }
}

/// Draws a random kink-free instance; returns it with the number of
/// rejected draws.
pub fn kink_free_instance(rng: &mut Rng, shape: &ModelShape) -> Result<(ModelParams, FrameFeatureSequence, usize, usize)> {
    let mut rejected = 0;
    loop {
        let seed = rng.next_u64();
        let mut params = ModelParams::init(shape, seed)?;
        // non-zero biases so the rectifier threshold is exercised
        for b in params.bank.biases.iter_mut().chain(params.heads.iter_mut().map(|h| &mut h.bias)) {
            b.as_mut_slice().iter_mut().for_each(|v| *v = rng.uniform_in(-0.5, 0.5));
        }
        for v in params.reduction.bias.as_mut_slice() {
            *v = rng.uniform_in(-0.5, 0.5);
        }
        let mut frames = Matrix::zeros(shape.segments, shape.input_dim);
        frames.as_mut_slice().iter_mut().for_each(|v| *v = rng.standard_normal());
        let seq = FrameFeatureSequence::new(frames)?;
        let label = rng.below(shape.classes);
        let indices: Vec<usize> = (0..shape.segments).collect();
        let pass = params.forward_indices(&seq, indices, None)?;
        if kink_margin(pass.conv.input.matrix(), &params.bank) >= KINK_MARGIN {
            return Ok((params, seq, label, rejected));
        }
        rejected += 1;
    }
}

fn gradient_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let shape = gradient_check_shape();
    let mut rng = Rng::stream(seed, StreamFamily::Test, 0);
    let mut res = SuiteResult {
        name: "end-to-end gradients",
        passed: 0,
        failed: 0,
        worst: 0.0,
    };
    for _ in 0..instances {
        let (params, seq, label, _) = kink_free_instance(&mut rng, &shape)?;
        let check = check_model_gradients(&params, &seq, label, GRAD_EPS, GRAD_TOLERANCE)?;
        res.worst = res.worst.max(check.worst);
        if check.mismatches == 0 {
            res.passed += 1;
        } else {
            res.failed += 1;
        }
    }
    Ok(res)
}

fn conv_oracle_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let mut rng = Rng::stream(seed, StreamFamily::Test, 1);
    let mut res = SuiteResult {
        name: "convolution oracle",
        passed: 0,
        failed: 0,
        worst: 0.0,
    };
    for _ in 0..instances {
        let n = 2 + rng.below(7);
        let k = 1 + rng.below(4);
        let m = 1 + rng.below(4);
        let widths: Vec<usize> = (2..=n).filter(|_| rng.uniform() < 0.6).collect();
        let widths = if widths.is_empty() { vec![2] } else { widths };
        let bank = TemporalFilterBank::init(&mut rng, widths, m, k)?;
        let mut x = Matrix::zeros(n, k);
        x.as_mut_slice().iter_mut().for_each(|v| *v = rng.standard_normal());
        let fast = multiscale_forward(&DenseImage::from_matrix(x.clone())?, &bank)?;
        let slow = naive_multiscale(&x, &bank);
        let mut worst = 0.0_f64;
        for (p, o) in fast.pooled.iter().zip(&slow) {
            for (a, b) in p.values.iter().zip(o) {
                worst = worst.max((a - b).abs());
            }
        }
        res.worst = res.worst.max(worst);
        if worst <= 1e-12 {
            res.passed += 1;
        } else {
            res.failed += 1;
        }
    }
    Ok(res)
}

fn softmax_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let mut rng = Rng::stream(seed, StreamFamily::Test, 2);
    let mut res = SuiteResult {
        name: "softmax normalisation",
        passed: 0,
        failed: 0,
        worst: 0.0,
    };
    for i in 0..instances {
        let len = 1 + rng.below(10);
        let scale = if i % 2 == 0 { 1000.0 } else { 10.0 };
        let z: Vec<f64> = (0..len).map(|_| rng.uniform_in(-scale, scale)).collect();
        let p = softmax(&z)?;
        let err = (p.iter().sum::<f64>() - 1.0).abs();
        res.worst = res.worst.max(err);
        if err <= 1e-9 && p.iter().all(|v| v.is_finite() && *v >= 0.0) {
            res.passed += 1;
        } else {
            res.failed += 1;
        }
    }
    Ok(res)
}

fn loss_gradient_suite(seed: u64, instances: usize) -> Result<SuiteResult> {
    let mut rng = Rng::stream(seed, StreamFamily::Test, 3);
    let mut res = SuiteResult {
        name: "cross-entropy gradient",
        passed: 0,
        failed: 0,
        worst: 0.0,
    };
    for _ in 0..instances {
        let len = 1 + rng.below(10);
        let mut z: Vec<f64> = (0..len).map(|_| rng.uniform_in(-3.0, 3.0)).collect();
        let label = rng.below(len);
        let (_, grad) = cross_entropy_from_logits(&z, label)?;
        let mut worst = 0.0_f64;
        for (i, &g) in grad.iter().enumerate() {
            let fd = central_difference(&mut z, i, 1e-5, |v| {
                cross_entropy_from_logits(v, label).map(|r| r.0).unwrap_or(f64::NAN)
            });
            worst = worst.max(relative_error(g, fd));
        }
        res.worst = res.worst.max(worst);
        if worst <= 1e-6 {
            res.passed += 1;
        } else {
            res.failed += 1;
        }
    }
    Ok(res)
}

/// Runs every suite with a fixed instance budget.
pub fn run_selftest(seed: u64) -> Result<SelfTestReport> {
    Ok(SelfTestReport {
        suites: vec![
            loss_gradient_suite(seed, 100)?,
            softmax_suite(seed, 1000)?,
            conv_oracle_suite(seed, 100)?,
            gradient_suite(seed, 50)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_matches_hand_example() {
        // k=1, one filter of width 2 with weights [1, 1]
        let x = Matrix::from_vec(3, 1, vec![1.0, 2.0, -4.0]).unwrap();
        let w = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(naive_preactivations(&x, &w, &[0.5]), vec![vec![3.5, -1.5]]);
    }

    #[test]
    fn small_selftest_passes() {
        assert!(gradient_suite(1, 3).unwrap().ok());
        assert!(conv_oracle_suite(1, 20).unwrap().ok());
        assert!(softmax_suite(1, 50).unwrap().ok());
        assert!(loss_gradient_suite(1, 20).unwrap().ok());
    }
}

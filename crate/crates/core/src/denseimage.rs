//! DenseImage encoding: sample `n` frames from a variable-length per-frame
//! feature sequence, project each through a trainable linear reduction, and
//! stack the results row by row in temporal order.
//!
//! Rows of the resulting matrix are time; columns are feature dimensions.
//! Nothing in this module ever mixes information between rows.

use crate::error::{ensure, Result};
use crate::numerics::{glorot_uniform, Matrix, Rng};

/// Per-frame features of one video, one frame per row, in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureSequence {
    features: Matrix,
}

impl FrameFeatureSequence {
    pub fn new(features: Matrix) -> Result<Self> {
        ensure!(features.rows() >= 1, "a feature sequence needs at least one frame");
        ensure!(features.cols() >= 1, "frame features need at least one dimension");
        ensure!(features.all_finite(), "frame features contain non-finite values");
        Ok(Self { features })
    }

    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.features.row(t)
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }
}

/// Fully connected `D -> k` projection applied to every sampled frame.
/// No nonlinearity: the rectifier in the temporal convolution follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionLayer {
    /// `D x k`.
    pub weights: Matrix,
    /// `1 x k`.
    pub bias: Matrix,
}

impl ReductionLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        ensure!(
            weights.cols() == bias.len(),
            "reduction bias has {} entries, weights produce {}",
            bias.len(),
            weights.cols()
        );
        ensure!(
            weights.cols() <= weights.rows(),
            "reduction must not widen features ({} -> {})",
            weights.rows(),
            weights.cols()
        );
        Ok(Self {
            weights,
            bias: Matrix::row_vector(bias),
        })
    }

    /// Glorot-initialised weights, zero bias.
    pub fn init(rng: &mut Rng, input_dim: usize, output_dim: usize) -> Result<Self> {
        let weights = glorot_uniform(rng, input_dim, output_dim, input_dim, output_dim)?;
        Self::new(weights, vec![0.0; output_dim])
    }

    /// `D = k` identity projection with zero bias.
    pub fn identity(dim: usize) -> Self {
        Self {
            weights: Matrix::identity(dim),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Adds this frame's contribution to `grad_weights` / `grad_bias` and
    /// returns nothing; used on the hot training path where the input
    /// gradient is not needed.
    pub(crate) fn accumulate_backward(
        &self,
        raw: &[f64],
        grad_out: &[f64],
        grad_weights: &mut Matrix,
        grad_bias: &mut [f64],
    ) {
        for (r, gw_row) in raw.iter().zip(grad_weights.as_mut_slice().chunks_exact_mut(grad_out.len())) {
            for (gw, g) in gw_row.iter_mut().zip(grad_out) {
                *gw += r * g;
            }
        }
        for (gb, g) in grad_bias.iter_mut().zip(grad_out) {
            *gb += g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// One uniformly random frame per segment.
    TrainRandom,
    /// The centre frame of each segment; never consumes randomness.
    EvalCenter,
}

/// `n x k` matrix whose row `i` is the reduced feature of sampled frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseImage {
    x: Matrix,
}

impl DenseImage {
    pub fn from_matrix(x: Matrix) -> Result<Self> {
        ensure!(x.rows() >= 1 && x.cols() >= 1, "empty DenseImage");
        Ok(Self { x })
    }

    /// Number of frames (rows).
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    /// Feature dimension (columns).
    pub fn k(&self) -> usize {
        self.x.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.x
    }

    pub fn into_matrix(self) -> Matrix {
        self.x
    }

    /// Mean over frames: the order-blind summary of this video.
    pub fn column_mean(&self) -> Vec<f64> {
        self.x.column_means()
    }
}

/// Picks `n` frame indices out of `num_frames` by splitting the video into
/// `n` segments `[floor(sT/n), floor((s+1)T/n))` and drawing one frame per
/// segment.
///
/// When `num_frames < n` some segments are empty; those take their boundary
/// frame `floor(sT/n)`, which repeats frames while keeping the indices
/// non-decreasing.
pub fn sample_segments(num_frames: usize, n: usize, mode: SamplingMode, rng: &mut Rng) -> Result<Vec<usize>> {
    ensure!(num_frames >= 1, "cannot sample from a video with zero frames");
    ensure!(n >= 1, "must sample at least one segment");
    let (t, n64) = (num_frames as u64, n as u64);
    let indices = (0..n64)
        .map(|s| {
            let start = (s * t / n64) as usize;
            let end = ((s + 1) * t / n64) as usize;
            let len = end - start;
            if len == 0 {
                return start;
            }
            match mode {
                SamplingMode::EvalCenter => start + (len - 1) / 2,
                SamplingMode::TrainRandom => start + rng.below(len),
            }
        })
        .collect();
    Ok(indices)
}

pub fn reduce_frame(raw: &[f64], layer: &ReductionLayer) -> Result<Vec<f64>> {
    ensure!(
        raw.len() == layer.input_dim(),
        "frame has {} dims, reduction expects {}",
        raw.len(),
        layer.input_dim()
    );
    let mut out = layer.weights.vec_mul(raw)?;
    for (o, b) in out.iter_mut().zip(layer.bias.as_slice()) {
        *o += b;
    }
    Ok(out)
}

/// Stacks the reduced features of the frames at `indices`, in the given order.
pub fn encode_indices(seq: &FrameFeatureSequence, layer: &ReductionLayer, indices: &[usize]) -> Result<DenseImage> {
    ensure!(!indices.is_empty(), "no frames selected");
    let k = layer.output_dim();
    let mut x = Matrix::zeros(indices.len(), k);
    for (row, &t) in indices.iter().enumerate() {
        ensure!(
            t < seq.num_frames(),
            "frame index {t} out of range for {} frames",
            seq.num_frames()
        );
        let reduced = reduce_frame(seq.frame(t), layer)?;
        x.row_mut(row).copy_from_slice(&reduced);
    }
    DenseImage::from_matrix(x)
}

pub fn encode(
    seq: &FrameFeatureSequence,
    layer: &ReductionLayer,
    n: usize,
    mode: SamplingMode,
    rng: &mut Rng,
) -> Result<DenseImage> {
    let indices = sample_segments(seq.num_frames(), n, mode, rng)?;
    encode_indices(seq, layer, &indices)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionGrads {
    /// `D x k`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub raw: Vec<f64>,
}

pub fn reduce_backward(raw: &[f64], layer: &ReductionLayer, grad_out: &[f64]) -> Result<ReductionGrads> {
    ensure!(
        raw.len() == layer.input_dim(),
        "frame has {} dims, reduction expects {}",
        raw.len(),
        layer.input_dim()
    );
    ensure!(
        grad_out.len() == layer.output_dim(),
        "upstream gradient has {} entries, reduction produces {}",
        grad_out.len(),
        layer.output_dim()
    );
    let mut weights = Matrix::zeros(layer.input_dim(), layer.output_dim());
    let mut bias = vec![0.0; layer.output_dim()];
    layer.accumulate_backward(raw, grad_out, &mut weights, &mut bias);
    let raw_grad = layer.weights.mul_vec(grad_out)?;
    Ok(ReductionGrads {
        weights,
        bias,
        raw: raw_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::central_difference;

    fn eval(t: usize, n: usize) -> Vec<usize> {
        sample_segments(t, n, SamplingMode::EvalCenter, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn segment_examples() {
        assert_eq!(eval(8, 8), (0..8).collect::<Vec<_>>());
        assert_eq!(eval(16, 8), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        // T=3, n=8: boundaries floor(3s/8) = 0,0,0,1,1,1,2,2,3; segments 2, 5
        // and 7 hold one frame each, the rest are empty and take their start.
        assert_eq!(eval(3, 8), vec![0, 0, 0, 1, 1, 1, 2, 2]);
        assert_eq!(eval(10, 3), vec![1, 4, 7]);
    }

    #[test]
    fn segment_errors() {
        let mut rng = Rng::new(0);
        assert!(sample_segments(0, 8, SamplingMode::EvalCenter, &mut rng).is_err());
        assert!(sample_segments(8, 0, SamplingMode::TrainRandom, &mut rng).is_err());
    }

    #[test]
    fn eval_center_ignores_rng() {
        let a = sample_segments(37, 8, SamplingMode::EvalCenter, &mut Rng::new(1)).unwrap();
        let b = sample_segments(37, 8, SamplingMode::EvalCenter, &mut Rng::new(999)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reduce_frame_examples() {
        let zero = ReductionLayer::new(Matrix::zeros(3, 2), vec![0.25, -1.0]).unwrap();
        assert_eq!(reduce_frame(&[5.0, -2.0, 9.0], &zero).unwrap(), vec![0.25, -1.0]);

        let sum = ReductionLayer::new(Matrix::from_rows(&[[1.0], [1.0]]).unwrap(), vec![0.0]).unwrap();
        assert_eq!(reduce_frame(&[3.0, 4.0], &sum).unwrap(), vec![7.0]);
        assert!(reduce_frame(&[3.0], &sum).is_err());
    }

    #[test]
    fn reduce_frame_matches_naive_loop() {
        let mut rng = Rng::new(5);
        let layer = ReductionLayer {
            weights: glorot_uniform(&mut rng, 5, 3, 5, 3).unwrap(),
            bias: Matrix::row_vector(vec![0.1, -0.2, 0.3]),
        };
        let raw: Vec<f64> = (0..5).map(|_| rng.standard_normal()).collect();
        let got = reduce_frame(&raw, &layer).unwrap();
        for j in 0..3 {
            let mut acc = layer.bias.get(0, j);
            for i in 0..5 {
                acc += raw[i] * layer.weights.get(i, j);
            }
            assert!((got[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn widening_reduction_rejected() {
        assert!(ReductionLayer::new(Matrix::zeros(2, 3), vec![0.0; 3]).is_err());
    }

    #[test]
    fn encode_identity_and_reversal() {
        let seq = FrameFeatureSequence::new(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap()).unwrap();
        let layer = ReductionLayer::identity(2);
        let x = encode(&seq, &layer, 2, SamplingMode::EvalCenter, &mut Rng::new(0)).unwrap();
        assert_eq!(x.matrix(), seq.features());

        let rev = FrameFeatureSequence::new(Matrix::from_rows(&[[3.0, 4.0], [1.0, 2.0]]).unwrap()).unwrap();
        let xr = encode(&rev, &layer, 2, SamplingMode::EvalCenter, &mut Rng::new(0)).unwrap();
        assert_eq!(xr.matrix().row(0), x.matrix().row(1));
        assert_eq!(xr.matrix().row(1), x.matrix().row(0));
    }

    #[test]
    fn full_size_configuration_shape() {
        let mut rng = Rng::new(3);
        let raw = glorot_uniform(&mut rng, 1, 1, 40, 1024).unwrap();
        let seq = FrameFeatureSequence::new(raw).unwrap();
        let layer = ReductionLayer::init(&mut rng, 1024, 256).unwrap();
        let x = encode(&seq, &layer, 8, SamplingMode::TrainRandom, &mut rng).unwrap();
        assert_eq!((x.n(), x.k()), (8, 256));
    }

    #[test]
    fn reduce_backward_examples() {
        let layer = ReductionLayer::new(Matrix::from_rows(&[[1.0], [1.0]]).unwrap(), vec![0.0]).unwrap();
        let g = reduce_backward(&[3.0, 4.0], &layer, &[1.0]).unwrap();
        assert_eq!(g.weights, Matrix::from_rows(&[[3.0], [4.0]]).unwrap());
        assert_eq!(g.bias, vec![1.0]);
        assert_eq!(g.raw, vec![1.0, 1.0]);

        let z = reduce_backward(&[3.0, 4.0], &layer, &[0.0]).unwrap();
        assert!(z.weights.as_slice().iter().chain(&z.bias).chain(&z.raw).all(|&v| v == 0.0));

        assert!(reduce_backward(&[3.0], &layer, &[1.0]).is_err());
        assert!(reduce_backward(&[3.0, 4.0], &layer, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn reduce_backward_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let (d, k) = (4, 3);
        let layer = ReductionLayer {
            weights: glorot_uniform(&mut rng, d, k, d, k).unwrap(),
            bias: Matrix::row_vector((0..k).map(|_| rng.standard_normal()).collect()),
        };
        let raw: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let probe: Vec<f64> = (0..k).map(|_| rng.standard_normal()).collect();
        // scalar probe: sum_j probe_j * y_j
        let scalar = |l: &ReductionLayer, r: &[f64]| -> f64 {
            reduce_frame(r, l).unwrap().iter().zip(&probe).map(|(y, p)| y * p).sum()
        };
        let g = reduce_backward(&raw, &layer, &probe).unwrap();

        let check = |analytic: f64, numeric: f64| {
            let rel = crate::numerics::relative_error(analytic, numeric);
            assert!(rel < 1e-6, "analytic {analytic} vs numeric {numeric}");
        };
        for i in 0..d * k {
            let mut w = layer.weights.as_slice().to_vec();
            let num = central_difference(&mut w, i, 1e-5, |w| {
                let l = ReductionLayer {
                    weights: Matrix::from_vec(d, k, w.to_vec()).unwrap(),
                    bias: layer.bias.clone(),
                };
                scalar(&l, &raw)
            });
            check(g.weights.as_slice()[i], num);
        }
        for j in 0..k {
            let mut b = layer.bias.as_slice().to_vec();
            let num = central_difference(&mut b, j, 1e-5, |b| {
                let l = ReductionLayer {
                    weights: layer.weights.clone(),
                    bias: Matrix::row_vector(b.to_vec()),
                };
                scalar(&l, &raw)
            });
            check(g.bias[j], num);
        }
        for i in 0..d {
            let mut r = raw.clone();
            let num = central_difference(&mut r, i, 1e-5, |r| scalar(&layer, r));
            check(g.raw[i], num);
        }
    }
}

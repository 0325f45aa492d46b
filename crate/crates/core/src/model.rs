//! The full trainable network: reduction layer, temporal filter bank and one
//! head per width, plus the end-to-end forward and backward passes.

use serde::{Deserialize, Serialize};

use crate::classifier::{classifier_backward, fuse_and_score, head_forward, ClassScores, ScaleHead};
use crate::denseimage::{encode_indices, sample_segments, FrameFeatureSequence, ReductionLayer, SamplingMode};
use crate::error::{ensure, Result};
use crate::numerics::{cross_entropy_from_logits, sample_dropout_mask, DropoutMask, Matrix, Rng, StreamFamily};
use crate::temporal_conv::{multiscale_backward, multiscale_forward, MultiScaleCache, TemporalFilterBank};

/// Sizes that determine every tensor in the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    /// Raw per-frame feature dimension `D`.
    pub input_dim: usize,
    /// Reduced per-frame dimension `k`.
    pub reduced_dim: usize,
    /// Sampled frames per video `n`.
    pub segments: usize,
    /// Temporal filter widths `H`.
    pub widths: Vec<usize>,
    /// Filters per width `M`.
    pub channels: usize,
    /// Number of classes `C`.
    pub classes: usize,
}

impl ModelShape {
    /// 1024-dim frame features reduced to 256 dims, 8 segments,
    /// widths 2 through 6 with 256 filters each.
    pub fn full_size(classes: usize) -> Self {
        Self {
            input_dim: 1024,
            reduced_dim: 256,
            segments: 8,
            widths: vec![2, 3, 4, 5, 6],
            channels: 256,
            classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.input_dim >= 1, "input_dim must be positive");
        ensure!(self.reduced_dim >= 1, "reduced_dim must be positive");
        ensure!(
            self.reduced_dim <= self.input_dim,
            "reduced_dim {} exceeds input_dim {}",
            self.reduced_dim,
            self.input_dim
        );
        ensure!(self.segments >= 2, "need at least 2 segments");
        ensure!(!self.widths.is_empty(), "need at least one temporal width");
        for (i, &h) in self.widths.iter().enumerate() {
            ensure!(
                (2..=self.segments).contains(&h),
                "temporal width {h} must lie in [2, {}]",
                self.segments
            );
            ensure!(!self.widths[..i].contains(&h), "duplicate temporal width {h}");
        }
        ensure!(self.channels >= 1, "channels must be positive");
        ensure!(self.classes >= 1, "classes must be positive");
        Ok(())
    }
}

/// Borrowed view of one named parameter tensor.
#[derive(Debug)]
pub struct ParamTensor<'a> {
    pub name: String,
    pub value: &'a Matrix,
    /// Weight decay applies; false for biases.
    pub decays: bool,
}

#[derive(Debug)]
pub struct ParamTensorMut<'a> {
    pub name: String,
    pub value: &'a mut Matrix,
    pub decays: bool,
}

/// All trainable state. Also used as the container for gradients and
/// momentum buffers, which mirror it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    pub reduction: ReductionLayer,
    pub bank: TemporalFilterBank,
    pub heads: Vec<ScaleHead>,
}

impl ModelParams {
    /// Glorot weights and zero biases, drawn from the seed's init stream.
    pub fn init(shape: &ModelShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = Rng::stream(seed, StreamFamily::Init, 0);
        let reduction = ReductionLayer::init(&mut rng, shape.input_dim, shape.reduced_dim)?;
        let bank = TemporalFilterBank::init(&mut rng, shape.widths.clone(), shape.channels, shape.reduced_dim)?;
        let heads = shape
            .widths
            .iter()
            .map(|&h| ScaleHead::init(&mut rng, h, shape.channels, shape.classes))
            .collect::<Result<_>>()?;
        Ok(Self {
            shape: shape.clone(),
            reduction,
            bank,
            heads,
        })
    }

    pub fn zeros(shape: &ModelShape) -> Result<Self> {
        shape.validate()?;
        let reduction = ReductionLayer::new(
            Matrix::zeros(shape.input_dim, shape.reduced_dim),
            vec![0.0; shape.reduced_dim],
        )?;
        let bank = TemporalFilterBank::zeros(shape.widths.clone(), shape.channels, shape.reduced_dim)?;
        let heads = shape
            .widths
            .iter()
            .map(|&h| ScaleHead::new(h, Matrix::zeros(shape.classes, shape.channels), vec![0.0; shape.classes]))
            .collect::<Result<_>>()?;
        Ok(Self {
            shape: shape.clone(),
            reduction,
            bank,
            heads,
        })
    }

    /// Assembles parameters from parts, checking they chain `D -> k -> M -> C`.
    pub fn from_parts(
        segments: usize,
        reduction: ReductionLayer,
        bank: TemporalFilterBank,
        heads: Vec<ScaleHead>,
    ) -> Result<Self> {
        let shape = ModelShape {
            input_dim: reduction.input_dim(),
            reduced_dim: reduction.output_dim(),
            segments,
            widths: bank.widths().to_vec(),
            channels: bank.channels(),
            classes: heads.first().map_or(0, ScaleHead::classes),
        };
        shape.validate()?;
        ensure!(
            bank.frame_dim() == shape.reduced_dim,
            "filter bank expects {}-dim frames, reduction produces {}",
            bank.frame_dim(),
            shape.reduced_dim
        );
        ensure!(heads.len() == shape.widths.len(), "{} heads for {} widths", heads.len(), shape.widths.len());
        for (head, &h) in heads.iter().zip(&shape.widths) {
            ensure!(head.h == h, "head for width {} is paired with width {h}", head.h);
            ensure!(
                head.weights.shape() == (shape.classes, shape.channels),
                "head {h} weights are {:?}, expected {:?}",
                head.weights.shape(),
                (shape.classes, shape.channels)
            );
        }
        Ok(Self {
            shape,
            reduction,
            bank,
            heads,
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    /// Fixed-order named tensors: reduction, then per width the filters,
    /// then per width the heads.
    pub fn tensors(&self) -> Vec<ParamTensor<'_>> {
        let mut out = vec![
            ParamTensor {
                name: "reduction.weight".into(),
                value: &self.reduction.weights,
                decays: true,
            },
            ParamTensor {
                name: "reduction.bias".into(),
                value: &self.reduction.bias,
                decays: false,
            },
        ];
        for (i, &h) in self.bank.widths().iter().enumerate() {
            out.push(ParamTensor {
                name: format!("conv.h{h}.weight"),
                value: &self.bank.weights[i],
                decays: true,
            });
            out.push(ParamTensor {
                name: format!("conv.h{h}.bias"),
                value: &self.bank.biases[i],
                decays: false,
            });
        }
        for head in &self.heads {
            out.push(ParamTensor {
                name: format!("head.h{}.weight", head.h),
                value: &head.weights,
                decays: true,
            });
            out.push(ParamTensor {
                name: format!("head.h{}.bias", head.h),
                value: &head.bias,
                decays: false,
            });
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ParamTensorMut<'_>> {
        let widths = self.bank.widths().to_vec();
        let mut out = vec![
            ParamTensorMut {
                name: "reduction.weight".into(),
                value: &mut self.reduction.weights,
                decays: true,
            },
            ParamTensorMut {
                name: "reduction.bias".into(),
                value: &mut self.reduction.bias,
                decays: false,
            },
        ];
        for ((h, w), b) in widths.iter().zip(&mut self.bank.weights).zip(&mut self.bank.biases) {
            out.push(ParamTensorMut {
                name: format!("conv.h{h}.weight"),
                value: w,
                decays: true,
            });
            out.push(ParamTensorMut {
                name: format!("conv.h{h}.bias"),
                value: b,
                decays: false,
            });
        }
        for head in &mut self.heads {
            out.push(ParamTensorMut {
                name: format!("head.h{}.weight", head.h),
                value: &mut head.weights,
                decays: true,
            });
            out.push(ParamTensorMut {
                name: format!("head.h{}.bias", head.h),
                value: &mut head.bias,
                decays: false,
            });
        }
        out
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|t| t.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.value.all_finite())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        ensure!(self.shape == other.shape, "parameter shapes differ");
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.value.add_scaled(src.value, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.value.scale(factor);
        }
    }

    fn check_sequence(&self, seq: &FrameFeatureSequence) -> Result<()> {
        ensure!(
            seq.dim() == self.shape.input_dim,
            "frames have {} dims, model expects {}",
            seq.dim(),
            self.shape.input_dim
        );
        Ok(())
    }

    /// Forward pass on explicitly chosen frames. `masks`, when given, holds
    /// one dropout mask per width.
    pub fn forward_indices(
        &self,
        seq: &FrameFeatureSequence,
        indices: Vec<usize>,
        masks: Option<Vec<DropoutMask>>,
    ) -> Result<ForwardPass> {
        self.check_sequence(seq)?;
        ensure!(
            indices.len() == self.shape.segments,
            "{} frames selected, model expects {}",
            indices.len(),
            self.shape.segments
        );
        if let Some(m) = &masks {
            ensure!(m.len() == self.heads.len(), "{} dropout masks for {} heads", m.len(), self.heads.len());
        }
        let image = encode_indices(seq, &self.reduction, &indices)?;
        let conv = multiscale_forward(&image, &self.bank)?;
        let per_scale = self
            .heads
            .iter()
            .zip(&conv.pooled)
            .enumerate()
            .map(|(s, (head, pooled))| head_forward(&pooled.values, head, masks.as_ref().map(|m| &m[s])))
            .collect::<Result<Vec<_>>>()?;
        let scores = fuse_and_score(per_scale)?;
        Ok(ForwardPass {
            indices,
            conv,
            masks,
            scores,
        })
    }

    /// Evaluation mode: centre-of-segment frames, no dropout.
    pub fn forward_eval(&self, seq: &FrameFeatureSequence) -> Result<ForwardPass> {
        // eval-centre sampling never touches the generator
        let mut unused = Rng::new(0);
        let indices = sample_segments(seq.num_frames(), self.shape.segments, SamplingMode::EvalCenter, &mut unused)?;
        self.forward_indices(seq, indices, None)
    }

    /// Training mode: random frame per segment, then one dropout mask per
    /// width, all drawn from `rng` in that order.
    pub fn forward_train(&self, seq: &FrameFeatureSequence, keep_probability: f64, rng: &mut Rng) -> Result<ForwardPass> {
        let indices = sample_segments(seq.num_frames(), self.shape.segments, SamplingMode::TrainRandom, rng)?;
        let masks = self
            .heads
            .iter()
            .map(|_| sample_dropout_mask(rng, self.shape.channels, keep_probability))
            .collect::<Result<Vec<_>>>()?;
        self.forward_indices(seq, indices, Some(masks))
    }

    /// Gradients of a scalar with respect to every parameter, given the
    /// scalar's gradient with respect to the fused logits.
    pub fn backward(&self, seq: &FrameFeatureSequence, pass: &ForwardPass, grad_logits: &[f64]) -> Result<ModelParams> {
        self.check_sequence(seq)?;
        let features: Vec<&[f64]> = pass.conv.pooled.iter().map(|p| p.values.as_slice()).collect();
        let cls = classifier_backward(&features, &self.heads, pass.masks.as_deref(), grad_logits)?;
        let conv = multiscale_backward(&self.bank, &pass.conv, &cls.features)?;

        let mut grads = ModelParams::zeros(&self.shape)?;
        for (row, &t) in pass.indices.iter().enumerate() {
            let g_row = conv.input.row(row);
            if g_row.iter().all(|&g| g == 0.0) {
                continue;
            }
            self.reduction.accumulate_backward(
                seq.frame(t),
                g_row,
                &mut grads.reduction.weights,
                grads.reduction.bias.as_mut_slice(),
            );
        }
        for (s, (gw, gb)) in conv.weights.into_iter().zip(conv.biases).enumerate() {
            grads.bank.weights[s] = gw;
            grads.bank.biases[s] = Matrix::row_vector(gb);
        }
        for (dst, src) in grads.heads.iter_mut().zip(cls.heads) {
            dst.weights = src.weights;
            dst.bias = Matrix::row_vector(src.bias);
        }
        Ok(grads)
    }

    /// Cross-entropy of `label` for this forward pass, and parameter gradients.
    pub fn loss_and_grads(&self, seq: &FrameFeatureSequence, pass: &ForwardPass, label: usize) -> Result<(f64, ModelParams)> {
        let (loss, grad_logits) = cross_entropy_from_logits(&pass.scores.fused_logits, label)?;
        let grads = self.backward(seq, pass, &grad_logits)?;
        Ok((loss, grads))
    }
}

/// Everything produced by one forward pass that backward needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub indices: Vec<usize>,
    pub conv: MultiScaleCache,
    pub masks: Option<Vec<DropoutMask>>,
    pub scores: ClassScores,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_shape() -> ModelShape {
        ModelShape {
            input_dim: 4,
            reduced_dim: 3,
            segments: 5,
            widths: vec![2, 3],
            channels: 4,
            classes: 3,
        }
    }

    #[test]
    fn shape_validation() {
        assert!(tiny_shape().validate().is_ok());
        let mut s = tiny_shape();
        s.widths = vec![2, 6];
        assert!(s.validate().is_err());
        let mut s = tiny_shape();
        s.reduced_dim = 5;
        assert!(s.validate().is_err());
        assert!(ModelShape::full_size(27).validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_and_counts_match() {
        let a = ModelParams::init(&tiny_shape(), 9).unwrap();
        let b = ModelParams::init(&tiny_shape(), 9).unwrap();
        assert_eq!(a, b);
        // 4*3+3 + (4*6+4) + (4*9+4) + 2*(3*4+3)
        assert_eq!(a.scalar_count(), 15 + 28 + 40 + 30);
        let names: Vec<String> = a.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names[0], "reduction.weight");
        assert_eq!(names[2], "conv.h2.weight");
        assert_eq!(names.last().unwrap(), "head.h3.bias");
    }

    #[test]
    fn forward_rejects_wrong_dims() {
        let p = ModelParams::init(&tiny_shape(), 1).unwrap();
        let seq = FrameFeatureSequence::new(Matrix::zeros(5, 2)).unwrap();
        assert!(p.forward_eval(&seq).is_err());
    }

    #[test]
    fn from_parts_roundtrip() {
        let p = ModelParams::init(&tiny_shape(), 3).unwrap();
        let q = ModelParams::from_parts(5, p.reduction.clone(), p.bank.clone(), p.heads.clone()).unwrap();
        assert_eq!(p, q);
    }
}

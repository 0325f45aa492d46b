//! Order-invariant reference classifier: average the raw frame features of a
//! video, then apply one linear layer. It cannot see temporal order, which
//! makes it the control for the synthetic order task.

use crate::classifier::argmax;
use crate::data_io::Sample;
use crate::denseimage::FrameFeatureSequence;
use crate::error::{ensure, Result};
use crate::numerics::{cross_entropy_from_logits, glorot_uniform, Matrix, Rng, StreamFamily};
use crate::trainer::{momentum_update, EpochReport, Evaluation, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFrameBaseline {
    /// `C x D`.
    pub weights: Matrix,
    /// `1 x C`.
    pub bias: Matrix,
}

impl MeanFrameBaseline {
    pub fn init(input_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::stream(seed, StreamFamily::Baseline, 0);
        Ok(Self {
            weights: glorot_uniform(&mut rng, input_dim, classes, classes, input_dim)?,
            bias: Matrix::zeros(1, classes),
        })
    }

    pub fn logits(&self, seq: &FrameFeatureSequence) -> Result<Vec<f64>> {
        let mean = seq.features().column_means();
        let mut out = self.weights.mul_vec(&mean)?;
        for (o, b) in out.iter_mut().zip(self.bias.as_slice()) {
            *o += b;
        }
        Ok(out)
    }

    fn loss_and_grads(&self, sample: &Sample, gw: &mut Matrix, gb: &mut [f64]) -> Result<f64> {
        let mean = sample.features.features().column_means();
        let logits = self.logits(&sample.features)?;
        let (loss, g) = cross_entropy_from_logits(&logits, sample.label)?;
        for (c, &gc) in g.iter().enumerate() {
            for (dst, x) in gw.row_mut(c).iter_mut().zip(&mean) {
                *dst += gc * x;
            }
            gb[c] += gc;
        }
        Ok(loss)
    }
}

pub fn evaluate_baseline(model: &MeanFrameBaseline, split: &[Sample]) -> Result<Evaluation> {
    ensure!(!split.is_empty(), "cannot evaluate an empty split");
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in split {
        let logits = model.logits(&s.features)?;
        loss += cross_entropy_from_logits(&logits, s.label)?.0;
        if argmax(&logits) == s.label {
            correct += 1;
        }
    }
    let n = split.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub model: MeanFrameBaseline,
    pub history: Vec<EpochReport>,
}

impl BaselineOutcome {
    pub fn best_val_accuracy(&self) -> Option<f64> {
        self.history.iter().map(|r| r.val_accuracy).reduce(f64::max)
    }
}

/// Trains with the same optimizer settings, batch size and epoch budget as
/// the main model. There is no dropout and no learning-rate schedule.
pub fn train_baseline(
    train: &[Sample],
    val: &[Sample],
    input_dim: usize,
    classes: usize,
    config: &TrainConfig,
) -> Result<BaselineOutcome> {
    config.validate()?;
    ensure!(!train.is_empty(), "cannot train on an empty split");
    let mut model = MeanFrameBaseline::init(input_dim, classes, config.seed)?;
    let mut vw = Matrix::zeros(classes, input_dim);
    let mut vb = Matrix::zeros(1, classes);
    let mut history = Vec::with_capacity(config.max_epochs);

    for epoch in 0..config.max_epochs {
        let mut rng = Rng::stream(config.seed, StreamFamily::Baseline, epoch as u32 + 1);
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut gw = Matrix::zeros(classes, input_dim);
            let mut gb = vec![0.0; classes];
            for &i in chunk {
                total += model.loss_and_grads(&train[i], &mut gw, &mut gb)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            gw.scale(inv);
            gb.iter_mut().for_each(|g| *g *= inv);
            let lr = config.initial_lr;
            momentum_update(
                model.weights.as_mut_slice(),
                gw.as_slice(),
                vw.as_mut_slice(),
                lr,
                config.momentum,
                config.weight_decay,
            );
            momentum_update(model.bias.as_mut_slice(), &gb, vb.as_mut_slice(), lr, config.momentum, 0.0);
        }
        let eval = evaluate_baseline(&model, val)?;
        history.push(EpochReport {
            epoch: epoch + 1,
            train_loss: total / train.len() as f64,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            current_lr: config.initial_lr,
        });
    }
    Ok(BaselineOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blind_to_frame_order() {
        let m = MeanFrameBaseline::init(3, 2, 4).unwrap();
        let fwd = FrameFeatureSequence::new(Matrix::from_rows(&[[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]]).unwrap()).unwrap();
        let rev = FrameFeatureSequence::new(Matrix::from_rows(&[[-1.0, 0.5, 2.0], [1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(m.logits(&fwd).unwrap(), m.logits(&rev).unwrap());
    }
}

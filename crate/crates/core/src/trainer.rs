//! Mini-batch SGD with momentum and L2 weight decay, plateau learning-rate
//! decay, evaluation and the epoch loop.
//!
//! Every epoch draws from its own generator keyed by `(seed, epoch)`, so a
//! run resumed from a checkpoint replays exactly the same randomness as an
//! uninterrupted one.

use serde::{Deserialize, Serialize};

use crate::classifier::predict;
use crate::data_io::Sample;
use crate::error::{ensure, Result};
use crate::model::ModelParams;
use crate::numerics::{cross_entropy_from_logits, Matrix, Rng, StreamFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub max_epochs: usize,
    pub dropout_keep: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 5e-4,
            initial_lr: 5e-4,
            lr_decay_factor: 0.1,
            plateau_patience: 5,
            max_epochs: 50,
            dropout_keep: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            (0.0..1.0).contains(&self.momentum),
            "momentum must be in [0, 1), got {}",
            self.momentum
        );
        ensure!(self.weight_decay >= 0.0, "weight_decay must be non-negative");
        ensure!(
            self.initial_lr >= 0.0 && self.initial_lr.is_finite(),
            "initial_lr must be finite and non-negative"
        );
        ensure!(
            self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0,
            "lr_decay_factor must be in (0, 1), got {}",
            self.lr_decay_factor
        );
        ensure!(self.plateau_patience >= 1, "plateau_patience must be at least 1");
        ensure!(
            self.dropout_keep > 0.0 && self.dropout_keep <= 1.0,
            "dropout_keep must be in (0, 1], got {}",
            self.dropout_keep
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub velocity: ModelParams,
    pub current_lr: f64,
    pub best_val_error: f64,
    pub epochs_since_improvement: usize,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            velocity: ModelParams::zeros(params.shape())?,
            current_lr: config.initial_lr,
            best_val_error: f64::INFINITY,
            epochs_since_improvement: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate used during this epoch.
    pub current_lr: f64,
}

/// `v <- momentum * v + (g + wd * p)`, then `p <- p - lr * v`.
pub(crate) fn momentum_update(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
}

fn update_tensor(param: &mut Matrix, grad: &Matrix, velocity: &mut Matrix, lr: f64, momentum: f64, wd: f64) -> Result<()> {
    ensure!(
        param.shape() == grad.shape() && param.shape() == velocity.shape(),
        "gradient shape {:?} does not match parameter {:?}",
        grad.shape(),
        param.shape()
    );
    momentum_update(param.as_mut_slice(), grad.as_slice(), velocity.as_mut_slice(), lr, momentum, wd);
    Ok(())
}

/// One momentum step over every tensor; biases are exempt from weight decay.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    ensure!(params.shape() == grads.shape(), "gradient shapes do not match the model");
    ensure!(
        params.shape() == state.velocity.shape(),
        "velocity shapes do not match the model"
    );
    let lr = state.current_lr;
    for ((p, g), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.velocity.tensors_mut())
    {
        let wd = if p.decays { config.weight_decay } else { 0.0 };
        update_tensor(p.value, g.value, v.value, lr, config.momentum, wd)?;
    }
    Ok(())
}

/// Records a validation error; returns whether the learning rate decayed.
pub fn plateau_update(state: &mut OptimizerState, val_error: f64, config: &TrainConfig) -> bool {
    if val_error < state.best_val_error - 1e-12 {
        state.best_val_error = val_error;
        state.epochs_since_improvement = 0;
        return false;
    }
    state.epochs_since_improvement += 1;
    if state.epochs_since_improvement >= config.plateau_patience {
        state.current_lr *= config.lr_decay_factor;
        state.epochs_since_improvement = 0;
        return true;
    }
    false
}

/// Mean loss and mean gradient of a mini-batch in training mode.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &[&Sample],
    keep_probability: f64,
    rng: &mut Rng,
) -> Result<(f64, ModelParams)> {
    ensure!(!batch.is_empty(), "empty mini-batch");
    let mut acc = ModelParams::zeros(params.shape())?;
    let mut loss_sum = 0.0;
    for sample in batch {
        let pass = params.forward_train(&sample.features, keep_probability, rng)?;
        let (loss, grads) = params.loss_and_grads(&sample.features, &pass, sample.label)?;
        loss_sum += loss;
        acc.add_scaled(&grads, 1.0)?;
    }
    let inv = 1.0 / batch.len() as f64;
    acc.scale(inv);
    Ok((loss_sum * inv, acc))
}

/// Consecutive mini-batches of `order`; only the last may be short.
pub fn minibatches(order: &[usize], batch_size: usize) -> std::slice::Chunks<'_, usize> {
    order.chunks(batch_size)
}

/// One pass over `split` in shuffled mini-batches; returns the mean
/// per-sample training loss. `epoch` is zero-based and keys the generator.
pub fn train_epoch(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    split: &[Sample],
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    ensure!(!split.is_empty(), "cannot train on an empty split");
    let mut rng = Rng::stream(config.seed, StreamFamily::Epoch, epoch as u32);
    let mut order: Vec<usize> = (0..split.len()).collect();
    rng.shuffle(&mut order);

    let mut total = 0.0;
    for chunk in minibatches(&order, config.batch_size) {
        let batch: Vec<&Sample> = chunk.iter().map(|&i| &split[i]).collect();
        let (loss, grads) = batch_loss_and_grads(params, &batch, config.dropout_keep, &mut rng)?;
        total += loss * batch.len() as f64;
        sgd_momentum_step(params, &grads, state, config)?;
    }
    Ok(total / split.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy with centre sampling and no dropout.
pub fn evaluate(params: &ModelParams, split: &[Sample]) -> Result<Evaluation> {
    ensure!(!split.is_empty(), "cannot evaluate an empty split");
    let mut loss = 0.0;
    let mut correct = 0usize;
    for sample in split {
        let pass = params.forward_eval(&sample.features)?;
        loss += cross_entropy_from_logits(&pass.scores.fused_logits, sample.label)?.0;
        if predict(&pass.scores) == sample.label {
            correct += 1;
        }
    }
    let n = split.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSnapshot {
    /// One-based epoch the snapshot was taken after.
    pub epoch: usize,
    pub val_accuracy: f64,
    pub params: ModelParams,
}

/// Resumable training state: parameters, optimizer, progress and history.
#[derive(Debug, Clone)]
pub struct TrainingSession {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub epochs_completed: usize,
    pub best: Option<BestSnapshot>,
    pub history: Vec<EpochReport>,
}

impl TrainingSession {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(&params, &config)?;
        Ok(Self {
            config,
            params,
            optimizer,
            epochs_completed: 0,
            best: None,
            history: Vec::new(),
        })
    }

    /// Continues from saved state. The best snapshot and history are not
    /// part of a checkpoint and start empty.
    pub fn resume(params: ModelParams, optimizer: OptimizerState, epochs_completed: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        ensure!(
            optimizer.velocity.shape() == params.shape(),
            "optimizer state does not match the model"
        );
        Ok(Self {
            config,
            params,
            optimizer,
            epochs_completed,
            best: None,
            history: Vec::new(),
        })
    }

    pub fn run_epoch(&mut self, train: &[Sample], val: &[Sample]) -> Result<EpochReport> {
        let lr = self.optimizer.current_lr;
        let train_loss = train_epoch(&mut self.params, &mut self.optimizer, train, &self.config, self.epochs_completed)?;
        ensure!(
            self.params.all_finite() && self.optimizer.velocity.all_finite(),
            "non-finite parameters after epoch {}",
            self.epochs_completed + 1
        );
        let eval = evaluate(&self.params, val)?;
        self.epochs_completed += 1;
        plateau_update(&mut self.optimizer, 1.0 - eval.accuracy, &self.config);

        let improved = self.best.as_ref().is_none_or(|b| eval.accuracy > b.val_accuracy);
        if improved {
            self.best = Some(BestSnapshot {
                epoch: self.epochs_completed,
                val_accuracy: eval.accuracy,
                params: self.params.clone(),
            });
        }
        let report = EpochReport {
            epoch: self.epochs_completed,
            train_loss,
            val_loss: eval.loss,
            val_accuracy: eval.accuracy,
            current_lr: lr,
        };
        self.history.push(report.clone());
        Ok(report)
    }

    /// Runs until `config.max_epochs` epochs have been completed in total.
    pub fn run_to_end(&mut self, train: &[Sample], val: &[Sample]) -> Result<()> {
        while self.epochs_completed < self.config.max_epochs {
            self.run_epoch(train, val)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters at the epoch with the highest validation accuracy (the
    /// initial parameters when no epoch ran).
    pub best_params: ModelParams,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub history: Vec<EpochReport>,
    pub final_params: ModelParams,
    pub optimizer: OptimizerState,
}

pub fn fit(params: ModelParams, train: &[Sample], val: &[Sample], config: &TrainConfig) -> Result<FitOutcome> {
    let initial = params.clone();
    let mut session = TrainingSession::new(params, config.clone())?;
    session.run_to_end(train, val)?;
    let (best_params, best_epoch, best_val_accuracy) = match session.best {
        Some(b) => (b.params, Some(b.epoch), Some(b.val_accuracy)),
        None => (initial, None, None),
    };
    Ok(FitOutcome {
        best_params,
        best_epoch,
        best_val_accuracy,
        history: session.history,
        final_params: session.params,
        optimizer: session.optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;

    fn scalar_shape() -> ModelShape {
        ModelShape {
            input_dim: 1,
            reduced_dim: 1,
            segments: 2,
            widths: vec![2],
            channels: 1,
            classes: 1,
        }
    }

    #[test]
    fn momentum_update_examples() {
        let mut p = vec![1.0, -2.0];
        let mut v = vec![0.0, 0.0];
        momentum_update(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(p, vec![1.0, -2.0]);

        momentum_update(&mut p, &[0.25, -0.5], &mut v, 1.0, 0.0, 0.0);
        assert_eq!(p, vec![0.75, -1.5]);

        let mut p = vec![1.0];
        let mut v = vec![0.0];
        momentum_update(&mut p, &[0.0], &mut v, 5e-4, 0.0, 5e-4);
        assert!((p[0] - 0.99999975).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn biases_skip_weight_decay() {
        let shape = scalar_shape();
        let mut params = ModelParams::zeros(&shape).unwrap();
        for t in params.tensors_mut() {
            t.value.fill(1.0);
        }
        let grads = ModelParams::zeros(&shape).unwrap();
        let config = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.5,
            initial_lr: 1.0,
            ..TrainConfig::default()
        };
        let mut state = OptimizerState::new(&params, &config).unwrap();
        sgd_momentum_step(&mut params, &grads, &mut state, &config).unwrap();
        for t in params.tensors() {
            let expected = if t.decays { 0.5 } else { 1.0 };
            assert!(t.value.as_slice().iter().all(|&v| v == expected), "{}", t.name);
        }
    }

    #[test]
    fn plateau_examples() {
        let params = ModelParams::zeros(&scalar_shape()).unwrap();
        let config = TrainConfig {
            plateau_patience: 2,
            ..TrainConfig::default()
        };
        let mut state = OptimizerState::new(&params, &config).unwrap();
        for e in [0.9, 0.8, 0.5, 0.1] {
            assert!(!plateau_update(&mut state, e, &config));
        }
        assert_eq!(state.current_lr, 5e-4);

        let mut state = OptimizerState::new(&params, &config).unwrap();
        assert!(!plateau_update(&mut state, 0.5, &config));
        assert!(!plateau_update(&mut state, 0.5, &config));
        assert!(plateau_update(&mut state, 0.5, &config));
        assert_eq!(state.current_lr, 5e-4 * 0.1);
        assert!((state.current_lr - 5e-5).abs() < 1e-20);
        assert_eq!(state.epochs_since_improvement, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { momentum: 1.0, ..Default::default() },
            TrainConfig { lr_decay_factor: 1.0, ..Default::default() },
            TrainConfig { dropout_keep: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn empty_splits_rejected() {
        let mut params = ModelParams::zeros(&scalar_shape()).unwrap();
        let config = TrainConfig::default();
        let mut state = OptimizerState::new(&params, &config).unwrap();
        assert!(train_epoch(&mut params, &mut state, &[], &config, 0).is_err());
        assert!(evaluate(&params, &[]).is_err());
    }
}

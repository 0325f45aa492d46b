//! DenseImage network: a temporal-convolution classification head over
//! precomputed per-frame video features.
//!
//! A video's frame features are sampled into `n` segments and linearly
//! reduced to a `n x k` DenseImage. Banks of temporal filters of several
//! widths slide over adjacent rows, are rectified and max-pooled over time,
//! and each width feeds its own linear head. Head logits are summed before
//! a single softmax.
//!
//! ```
//! use din_core::{ModelParams, ModelShape, FrameFeatureSequence, Matrix};
//!
//! let shape = ModelShape { input_dim: 6, reduced_dim: 4, segments: 4, widths: vec![2, 3], channels: 5, classes: 3 };
//! let params = ModelParams::init(&shape, 7).unwrap();
//! let frames = FrameFeatureSequence::new(Matrix::filled(10, 6, 0.25)).unwrap();
//! let pass = params.forward_eval(&frames).unwrap();
//! let total: f64 = pass.scores.probabilities.iter().sum();
//! assert!((total - 1.0).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod baseline;
pub mod classifier;
pub mod data_io;
pub mod denseimage;
mod error;
pub mod model;
pub mod numerics;
pub mod selftest;
pub mod temporal_conv;
pub mod trainer;

pub use analysis::{cost_report, count_parameters, estimate_flops, Breakdown, CostReport};
pub use classifier::{predict, ClassScores, ScaleHead};
pub use data_io::{Sample, Split};
pub use denseimage::{DenseImage, FrameFeatureSequence, ReductionLayer, SamplingMode};
pub use error::{Error, Result};
pub use model::{ForwardPass, ModelParams, ModelShape};
pub use numerics::{Matrix, Rng, StreamFamily};
pub use temporal_conv::TemporalFilterBank;
pub use trainer::{fit, EpochReport, OptimizerState, TrainConfig, TrainingSession};

//! Dense numeric kernel shared by every layer: matrices, seeded randomness,
//! activation/loss primitives and initialisation. All arithmetic is `f64`.

mod finite_diff;
mod matrix;
mod ops;
mod rng;

pub use finite_diff::{central_difference, relative_error};
pub use matrix::{dot, Matrix};
pub use ops::{
    cross_entropy_from_logits, glorot_uniform, log_sum_exp, relu, sample_dropout_mask, softmax,
    DropoutMask,
};
pub use rng::{Rng, StreamFamily};

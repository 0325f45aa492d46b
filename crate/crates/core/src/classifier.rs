//! Per-width fully connected heads and score fusion.
//!
//! Each pooled width feature goes through its own linear head; the logits
//! of all heads are summed and a single softmax turns the sum into class
//! probabilities.

use crate::error::{ensure, Result};
use crate::numerics::{glorot_uniform, softmax, DropoutMask, Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleHead {
    pub h: usize,
    /// `C x M`.
    pub weights: Matrix,
    /// `1 x C`.
    pub bias: Matrix,
}

impl ScaleHead {
    pub fn new(h: usize, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        ensure!(
            bias.len() == weights.rows(),
            "head {h}: bias has {} entries for {} classes",
            bias.len(),
            weights.rows()
        );
        Ok(Self {
            h,
            weights,
            bias: Matrix::row_vector(bias),
        })
    }

    pub fn init(rng: &mut Rng, h: usize, channels: usize, classes: usize) -> Result<Self> {
        let weights = glorot_uniform(rng, channels, classes, classes, channels)?;
        Self::new(h, weights, vec![0.0; classes])
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn channels(&self) -> usize {
        self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub fused_logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub per_scale_logits: Vec<Vec<f64>>,
}

/// `weights · (mask ⊙ c_h) + bias`; no mask means evaluation mode.
pub fn head_forward(c_h: &[f64], head: &ScaleHead, mask: Option<&DropoutMask>) -> Result<Vec<f64>> {
    ensure!(
        c_h.len() == head.channels(),
        "head {} expects {} features, got {}",
        head.h,
        head.channels(),
        c_h.len()
    );
    let mut logits = match mask {
        Some(mask) => head.weights.mul_vec(&mask.apply(c_h)?)?,
        None => head.weights.mul_vec(c_h)?,
    };
    for (l, b) in logits.iter_mut().zip(head.bias.as_slice()) {
        *l += b;
    }
    Ok(logits)
}

pub fn fuse_and_score(per_scale_logits: Vec<Vec<f64>>) -> Result<ClassScores> {
    ensure!(!per_scale_logits.is_empty(), "no scales to fuse");
    let classes = per_scale_logits[0].len();
    let mut fused = vec![0.0; classes];
    for (s, logits) in per_scale_logits.iter().enumerate() {
        ensure!(
            logits.len() == classes,
            "scale {s} has {} logits, expected {classes}",
            logits.len()
        );
        for (f, l) in fused.iter_mut().zip(logits) {
            *f += l;
        }
    }
    let probabilities = softmax(&fused)?;
    Ok(ClassScores {
        fused_logits: fused,
        probabilities,
        per_scale_logits,
    })
}

/// Index of the largest probability; ties go to the smallest index.
pub fn predict(scores: &ClassScores) -> usize {
    argmax(&scores.probabilities)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierGrads {
    pub heads: Vec<HeadGrads>,
    /// Gradient with respect to each pooled width feature.
    pub features: Vec<Vec<f64>>,
}

/// Backward through fusion and every head. The sum fans `grad_fused_logits`
/// out unchanged to each head.
pub fn classifier_backward(
    features: &[&[f64]],
    heads: &[ScaleHead],
    masks: Option<&[DropoutMask]>,
    grad_fused_logits: &[f64],
) -> Result<ClassifierGrads> {
    ensure!(
        features.len() == heads.len(),
        "{} feature vectors for {} heads",
        features.len(),
        heads.len()
    );
    if let Some(masks) = masks {
        ensure!(masks.len() == heads.len(), "{} masks for {} heads", masks.len(), heads.len());
    }
    let mut out = ClassifierGrads {
        heads: Vec::with_capacity(heads.len()),
        features: Vec::with_capacity(heads.len()),
    };
    for (s, (head, c_h)) in heads.iter().zip(features).enumerate() {
        ensure!(
            grad_fused_logits.len() == head.classes(),
            "gradient has {} entries for {} classes",
            grad_fused_logits.len(),
            head.classes()
        );
        ensure!(
            c_h.len() == head.channels(),
            "head {} expects {} features, got {}",
            head.h,
            head.channels(),
            c_h.len()
        );
        let mask = masks.map(|m| &m[s]);
        let input = match mask {
            Some(mask) => mask.apply(c_h)?,
            None => c_h.to_vec(),
        };
        let mut gw = Matrix::zeros(head.classes(), head.channels());
        for (c, &g) in grad_fused_logits.iter().enumerate() {
            for (dst, x) in gw.row_mut(c).iter_mut().zip(&input) {
                *dst = g * x;
            }
        }
        let mut g_in = head.weights.vec_mul(grad_fused_logits)?;
        if let Some(mask) = mask {
            for (g, m) in g_in.iter_mut().zip(mask.values()) {
                *g *= m;
            }
        }
        out.heads.push(HeadGrads {
            weights: gw,
            bias: grad_fused_logits.to_vec(),
        });
        out.features.push(g_in);
    }
    Ok(out)
}

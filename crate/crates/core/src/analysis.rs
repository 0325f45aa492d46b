//! Model accounting and introspection: exact parameter and FLOP counts,
//! per-window filter response exports, and pooled-feature exports for
//! external embedding tools.
//!
//! FLOP convention: a multiply-add counts as 2 operations; pooling and
//! softmax count 1 operation per element they touch. Bias additions are
//! folded into the multiply-add count and not counted separately.

use std::path::Path;

use serde::Serialize;

use crate::data_io::{write_atomic, Sample};
use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelShape};
use crate::temporal_conv::{response_profile, ResponseChannel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostLine {
    pub name: String,
    pub value: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    pub lines: Vec<CostLine>,
}

impl Breakdown {
    pub fn total(&self) -> u64 {
        self.lines.iter().map(|l| l.value).sum()
    }

    fn push(&mut self, name: impl Into<String>, value: usize) {
        self.lines.push(CostLine {
            name: name.into(),
            value: value as u64,
        });
    }
}

/// Externally sourced cost figures echoed next to our own numbers.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ReferenceCost {
    pub name: String,
    pub parameters: Option<f64>,
    pub flops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub parameter_count: u64,
    pub flops_per_video: u64,
    pub parameters: Breakdown,
    pub flops: Breakdown,
    pub references: Vec<ReferenceCost>,
}

pub fn count_parameters(shape: &ModelShape) -> Breakdown {
    let (d, k, m, c) = (shape.input_dim, shape.reduced_dim, shape.channels, shape.classes);
    let mut b = Breakdown { lines: Vec::new() };
    b.push("reduction", d * k + k);
    for &h in &shape.widths {
        b.push(format!("conv.h{h}"), m * h * k + m);
    }
    for &h in &shape.widths {
        b.push(format!("head.h{h}"), c * m + c);
    }
    b
}

pub fn estimate_flops(shape: &ModelShape) -> Breakdown {
    let (d, k, n, m, c) = (
        shape.input_dim,
        shape.reduced_dim,
        shape.segments,
        shape.channels,
        shape.classes,
    );
    let mut b = Breakdown { lines: Vec::new() };
    b.push("reduction", n * 2 * d * k);
    for &h in &shape.widths {
        b.push(format!("conv.h{h}"), m * (n - h + 1) * 2 * h * k);
    }
    for &h in &shape.widths {
        b.push(format!("pool.h{h}"), m * (n - h + 1));
    }
    for &h in &shape.widths {
        b.push(format!("head.h{h}"), 2 * c * m);
    }
    b.push("softmax", c);
    b
}

pub fn cost_report(shape: &ModelShape, references: Vec<ReferenceCost>) -> Result<CostReport> {
    shape.validate()?;
    let parameters = count_parameters(shape);
    let flops = estimate_flops(shape);
    Ok(CostReport {
        parameter_count: parameters.total(),
        flops_per_video: flops.total(),
        parameters,
        flops,
        references,
    })
}

impl std::fmt::Display for CostReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "parameters")?;
        for l in &self.parameters.lines {
            writeln!(f, "  {:<14} {:>16}", l.name, l.value)?;
        }
        writeln!(f, "  {:<14} {:>16}", "total", self.parameter_count)?;
        writeln!(f, "flops per video")?;
        for l in &self.flops.lines {
            writeln!(f, "  {:<14} {:>16}", l.name, l.value)?;
        }
        writeln!(f, "  {:<14} {:>16}", "total", self.flops_per_video)?;
        if !self.references.is_empty() {
            writeln!(f, "reference models (user supplied)")?;
            let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v}"));
            for r in &self.references {
                writeln!(f, "  {:<14} params {:>14}  flops {:>14}", r.name, show(r.parameters), show(r.flops))?;
            }
        }
        Ok(())
    }
}

/// One exported response profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseRow {
    pub sample_id: String,
    pub label: usize,
    pub h: usize,
    /// Channel-mean response of each window.
    pub intensities: Vec<f64>,
    pub argmax_window: usize,
    /// Source-video frame indices spanned by the strongest window.
    pub source_frames: (usize, usize),
}

fn sorted_by_id(samples: &[Sample]) -> Vec<&Sample> {
    let mut v: Vec<&Sample> = samples.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Eval-mode response profiles of width `h` for every sample, sorted by id.
pub fn response_rows(params: &ModelParams, samples: &[Sample], h: usize) -> Result<Vec<ResponseRow>> {
    if params.bank.index_of(h).is_none() {
        return Err(Error::invalid(format!("width {h} is not in the model")));
    }
    sorted_by_id(samples)
        .into_iter()
        .map(|s| {
            let pass = params.forward_eval(&s.features)?;
            let profile = response_profile(&pass.conv.input, &params.bank, h, ResponseChannel::Aggregate)?;
            let (first, last) = profile.argmax_rows();
            Ok(ResponseRow {
                sample_id: s.id.clone(),
                label: s.label,
                h,
                source_frames: (pass.indices[first], pass.indices[last]),
                argmax_window: profile.argmax_window,
                intensities: profile.intensities,
            })
        })
        .collect()
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(&header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

/// Writes response profiles as CSV with columns
/// `sample_id,label,h,argmax_window,first_row,last_row,first_frame,last_frame,w0..`.
/// Window intensities are the per-window mean over all channels.
pub fn export_responses(params: &ModelParams, samples: &[Sample], h: usize, path: impl AsRef<Path>) -> Result<Vec<ResponseRow>> {
    let rows = response_rows(params, samples, h)?;
    let windows = params.shape().segments - h + 1;
    let mut header: Vec<String> = [
        "sample_id",
        "label",
        "h",
        "argmax_window",
        "first_row",
        "last_row",
        "first_frame",
        "last_frame",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..windows).map(|i| format!("w{i}")));
    let bytes = csv_bytes(
        header,
        rows.iter().map(|r| {
            let mut rec = vec![
                r.sample_id.clone(),
                r.label.to_string(),
                r.h.to_string(),
                r.argmax_window.to_string(),
                r.argmax_window.to_string(),
                (r.argmax_window + r.h - 1).to_string(),
                r.source_frames.0.to_string(),
                r.source_frames.1.to_string(),
            ];
            rec.extend(r.intensities.iter().map(|v| format!("{v:e}")));
            rec
        }),
    )?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatureRow {
    pub sample_id: String,
    pub label: usize,
    /// Pooled width features concatenated in width order, length `M * |H|`.
    pub features: Vec<f64>,
    /// Mean over frames of the DenseImage: the order-blind comparison vector.
    pub frame_mean: Vec<f64>,
}

pub fn pooled_feature_rows(params: &ModelParams, samples: &[Sample]) -> Result<Vec<PooledFeatureRow>> {
    sorted_by_id(samples)
        .into_iter()
        .map(|s| {
            let pass = params.forward_eval(&s.features)?;
            Ok(PooledFeatureRow {
                sample_id: s.id.clone(),
                label: s.label,
                features: pass.conv.concatenated(),
                frame_mean: pass.conv.input.column_mean(),
            })
        })
        .collect()
}

/// Writes CSV with columns `sample_id,label,din_0..,mean_0..`.
pub fn export_pooled_features(params: &ModelParams, samples: &[Sample], path: impl AsRef<Path>) -> Result<Vec<PooledFeatureRow>> {
    let rows = pooled_feature_rows(params, samples)?;
    let shape = params.shape();
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..shape.channels * shape.widths.len()).map(|i| format!("din_{i}")));
    header.extend((0..shape.reduced_dim).map(|i| format!("mean_{i}")));
    let bytes = csv_bytes(
        header,
        rows.iter().map(|r| {
            let mut rec = vec![r.sample_id.clone(), r.label.to_string()];
            rec.extend(r.features.iter().chain(&r.frame_mean).map(|v| format!("{v:e}")));
            rec
        }),
    )?;
    write_atomic(path.as_ref(), &bytes)?;
    Ok(rows)
}

//! Multi-width temporal convolution over DenseImage rows, followed by
//! max-over-time pooling.
//!
//! A width-`h` filter spans `h` consecutive frames and the full feature
//! dimension `k`, so it is stored flattened as one row of length `h * k`.
//! Because a DenseImage is row-major, frames `i..i+h` are likewise one
//! contiguous slice of length `h * k`, and each window response is a single
//! dot product. Stride is 1 with no padding, giving `n - h + 1` windows.

use crate::denseimage::DenseImage;
use crate::error::{ensure, Result};
use crate::numerics::{dot, glorot_uniform, Matrix, Rng};

/// Filters for every temporal width, all with the same channel count `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFilterBank {
    widths: Vec<usize>,
    channels: usize,
    frame_dim: usize,
    /// Per width: `M x (h * k)`.
    pub weights: Vec<Matrix>,
    /// Per width: `1 x M`.
    pub biases: Vec<Matrix>,
}

impl TemporalFilterBank {
    pub fn new(widths: Vec<usize>, frame_dim: usize, weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(!widths.is_empty(), "filter bank needs at least one width");
        ensure!(frame_dim >= 1, "frame dimension must be positive");
        ensure!(
            weights.len() == widths.len() && biases.len() == widths.len(),
            "expected {} weight/bias pairs, got {}/{}",
            widths.len(),
            weights.len(),
            biases.len()
        );
        for (i, &h) in widths.iter().enumerate() {
            ensure!(h >= 2, "temporal width {h} is below 2");
            ensure!(!widths[..i].contains(&h), "duplicate temporal width {h}");
        }
        let channels = weights[0].rows();
        ensure!(channels >= 1, "filter bank needs at least one channel");
        for ((&h, w), b) in widths.iter().zip(&weights).zip(&biases) {
            ensure!(
                w.shape() == (channels, h * frame_dim),
                "width {h}: weights are {:?}, expected {:?}",
                w.shape(),
                (channels, h * frame_dim)
            );
            ensure!(b.len() == channels, "width {h}: bias has {} entries, expected {channels}", b.len());
        }
        Ok(Self {
            widths,
            channels,
            frame_dim,
            weights,
            biases: biases.into_iter().map(Matrix::row_vector).collect(),
        })
    }

    pub fn zeros(widths: Vec<usize>, channels: usize, frame_dim: usize) -> Result<Self> {
        let weights = widths.iter().map(|&h| Matrix::zeros(channels, h * frame_dim)).collect();
        let biases = widths.iter().map(|_| vec![0.0; channels]).collect();
        Self::new(widths, frame_dim, weights, biases)
    }

    /// Glorot weights (fan-in `h * k`, fan-out `M`), zero biases.
    pub fn init(rng: &mut Rng, widths: Vec<usize>, channels: usize, frame_dim: usize) -> Result<Self> {
        let mut weights = Vec::with_capacity(widths.len());
        for &h in &widths {
            weights.push(glorot_uniform(rng, h * frame_dim, channels, channels, h * frame_dim)?);
        }
        let biases = widths.iter().map(|_| vec![0.0; channels]).collect();
        Self::new(widths, frame_dim, weights, biases)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn index_of(&self, h: usize) -> Option<usize> {
        self.widths.iter().position(|&w| w == h)
    }

    pub fn bias(&self, scale: usize) -> &[f64] {
        self.biases[scale].as_slice()
    }

    /// Every width must fit inside an `n`-frame DenseImage.
    pub fn check_frames(&self, n: usize) -> Result<()> {
        for &h in &self.widths {
            ensure!(h <= n, "temporal width {h} exceeds the {n} frames available");
        }
        Ok(())
    }
}

/// Rectified responses of one width: element `(m, i)` is channel `m` on the
/// window starting at frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFeatureMap {
    pub h: usize,
    /// `M x (n - h + 1)`.
    pub values: Matrix,
}

impl ScaleFeatureMap {
    pub fn num_windows(&self) -> usize {
        self.values.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledScaleFeature {
    pub h: usize,
    pub values: Vec<f64>,
    /// Smallest window index attaining each channel's maximum.
    pub argmax_positions: Vec<usize>,
}

pub fn conv_scale_forward(x: &DenseImage, weights: &Matrix, bias: &[f64]) -> Result<ScaleFeatureMap> {
    let (n, k) = (x.n(), x.k());
    ensure!(
        weights.cols() % k == 0,
        "filter length {} is not a multiple of the frame dimension {k}",
        weights.cols()
    );
    let h = weights.cols() / k;
    ensure!(h >= 1, "empty filter");
    ensure!(h <= n, "temporal width {h} exceeds the {n} frames available");
    ensure!(
        bias.len() == weights.rows(),
        "bias has {} entries for {} channels",
        bias.len(),
        weights.rows()
    );
    let windows = n - h + 1;
    let mut values = Matrix::zeros(weights.rows(), windows);
    for i in 0..windows {
        let window = x.matrix().row_span(i, h);
        for (m, (filter, b)) in weights.iter_rows().zip(bias).enumerate() {
            let pre = dot(filter, window) + b;
            values.set(m, i, pre.max(0.0));
        }
    }
    Ok(ScaleFeatureMap { h, values })
}

pub fn temporal_max_pool(fmap: &ScaleFeatureMap) -> Result<PooledScaleFeature> {
    ensure!(fmap.num_windows() >= 1, "cannot pool a feature map with no windows");
    let (values, argmax_positions) = fmap.values.iter_rows().map(argmax_first).unzip();
    Ok(PooledScaleFeature {
        h: fmap.h,
        values,
        argmax_positions,
    })
}

/// `(max, smallest index attaining it)` of a non-empty slice.
fn argmax_first(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// State kept from a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct MultiScaleCache {
    pub input: DenseImage,
    pub maps: Vec<ScaleFeatureMap>,
    pub pooled: Vec<PooledScaleFeature>,
}

impl MultiScaleCache {
    /// Pooled vectors concatenated in width order (length `M * |H|`).
    pub fn concatenated(&self) -> Vec<f64> {
        self.pooled.iter().flat_map(|p| p.values.iter().copied()).collect()
    }
}

pub fn multiscale_forward(x: &DenseImage, bank: &TemporalFilterBank) -> Result<MultiScaleCache> {
    ensure!(
        x.k() == bank.frame_dim(),
        "DenseImage has {} columns, filters expect {}",
        x.k(),
        bank.frame_dim()
    );
    bank.check_frames(x.n())?;
    let mut maps = Vec::with_capacity(bank.widths().len());
    let mut pooled = Vec::with_capacity(bank.widths().len());
    for (s, w) in bank.weights.iter().enumerate() {
        let map = conv_scale_forward(x, w, bank.bias(s))?;
        pooled.push(temporal_max_pool(&map)?);
        maps.push(map);
    }
    Ok(MultiScaleCache {
        input: x.clone(),
        maps,
        pooled,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBankGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    /// Gradient with respect to the DenseImage, accumulated over all widths.
    pub input: Matrix,
}

/// Routes each channel's upstream gradient through its single argmax window,
/// gated by the rectifier, into the filter, its bias and the `h` rows the
/// window covered.
pub fn multiscale_backward(
    bank: &TemporalFilterBank,
    cache: &MultiScaleCache,
    grad_pooled: &[Vec<f64>],
) -> Result<FilterBankGrads> {
    let scales = bank.widths().len();
    ensure!(
        cache.maps.len() == scales && cache.pooled.len() == scales,
        "cache holds {} scales, bank has {scales}",
        cache.maps.len()
    );
    ensure!(
        grad_pooled.len() == scales,
        "{} upstream gradients for {scales} scales",
        grad_pooled.len()
    );
    let m_count = bank.channels();
    let k = bank.frame_dim();
    let x = cache.input.matrix();
    ensure!(x.cols() == k, "cached input width {} does not match the bank", x.cols());

    let mut grads = FilterBankGrads {
        weights: Vec::with_capacity(scales),
        biases: Vec::with_capacity(scales),
        input: Matrix::zeros(x.rows(), k),
    };
    for (s, upstream) in grad_pooled.iter().enumerate() {
        let h = bank.widths()[s];
        let (map, pooled) = (&cache.maps[s], &cache.pooled[s]);
        ensure!(
            map.h == h && pooled.h == h,
            "cache scale {s} has width {}, bank has {h}",
            map.h
        );
        ensure!(
            upstream.len() == m_count && pooled.values.len() == m_count,
            "scale {h}: gradient length {} for {m_count} channels",
            upstream.len()
        );
        let weights = &bank.weights[s];
        let mut gw = Matrix::zeros(m_count, h * k);
        let mut gb = vec![0.0; m_count];
        for m in 0..m_count {
            let g = upstream[m];
            let pos = pooled.argmax_positions[m];
            if g == 0.0 || map.values.get(m, pos) <= 0.0 {
                continue;
            }
            gb[m] += g;
            let window = x.row_span(pos, h);
            for (dst, xv) in gw.row_mut(m).iter_mut().zip(window) {
                *dst += g * xv;
            }
            for (dst, wv) in grads.input.row_span_mut(pos, h).iter_mut().zip(weights.row(m)) {
                *dst += g * wv;
            }
        }
        grads.weights.push(gw);
        grads.biases.push(gb);
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseChannel {
    Channel(usize),
    /// Per-window mean over all channels.
    Aggregate,
}

/// Where in time a filter (or the whole width) fires.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseProfile {
    pub h: usize,
    /// One intensity per window, `n - h + 1` of them.
    pub intensities: Vec<f64>,
    pub argmax_window: usize,
}

impl ResponseProfile {
    /// DenseImage rows covered by the strongest window, inclusive.
    pub fn argmax_rows(&self) -> (usize, usize) {
        (self.argmax_window, self.argmax_window + self.h - 1)
    }
}

pub fn response_profile(
    x: &DenseImage,
    bank: &TemporalFilterBank,
    h: usize,
    channel: ResponseChannel,
) -> Result<ResponseProfile> {
    let s = bank
        .index_of(h)
        .ok_or_else(|| crate::Error::invalid(format!("width {h} is not in the filter bank")))?;
    if let ResponseChannel::Channel(m) = channel {
        ensure!(m < bank.channels(), "channel {m} out of range for {} channels", bank.channels());
    }
    ensure!(
        x.k() == bank.frame_dim(),
        "DenseImage has {} columns, filters expect {}",
        x.k(),
        bank.frame_dim()
    );
    let map = conv_scale_forward(x, &bank.weights[s], bank.bias(s))?;
    let intensities = match channel {
        ResponseChannel::Channel(m) => map.values.row(m).to_vec(),
        ResponseChannel::Aggregate => {
            let inv = 1.0 / bank.channels() as f64;
            (0..map.num_windows())
                .map(|i| (0..bank.channels()).map(|m| map.values.get(m, i)).sum::<f64>() * inv)
                .collect()
        }
    };
    let (_, argmax_window) = argmax_first(&intensities);
    Ok(ResponseProfile {
        h,
        intensities,
        argmax_window,
    })
}

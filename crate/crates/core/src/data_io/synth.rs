//! Synthetic temporal-order task.
//!
//! `P` unit-norm prototype vectors are visited cyclically: class 0 walks
//! them in ascending order, class 1 in descending order, both from a random
//! starting prototype. At equal offsets the two classes contain exactly the
//! same frames, so only their order tells them apart.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::feature_file::write_feature_file;
use super::manifest::{write_manifest, DatasetManifest, ManifestEntry, Split};
use super::Sample;
use crate::denseimage::FrameFeatureSequence;
use crate::error::{ensure, Result};
use crate::numerics::{Matrix, Rng, StreamFamily};

pub const CLASS_NAMES: [&str; 2] = ["ascending", "descending"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub num_prototypes: usize,
    pub feature_dim: usize,
    pub noise_sigma: f64,
    pub sequence_length: usize,
    /// Training samples per class.
    pub samples_per_class: usize,
    /// Validation samples per class.
    pub val_samples_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            num_prototypes: 4,
            feature_dim: 16,
            noise_sigma: 0.1,
            sequence_length: 8,
            samples_per_class: 256,
            val_samples_per_class: 128,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        // with two prototypes ascending and descending cycles coincide
        ensure!(self.num_prototypes >= 3, "need at least 3 prototypes, got {}", self.num_prototypes);
        ensure!(self.feature_dim >= 1, "feature_dim must be positive");
        ensure!(self.sequence_length >= 2, "sequence_length must be at least 2");
        ensure!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise_sigma must be finite and non-negative"
        );
        ensure!(self.samples_per_class >= 1, "samples_per_class must be positive");
        ensure!(self.val_samples_per_class >= 1, "val_samples_per_class must be positive");
        Ok(())
    }
}

/// Prototype index at each frame for a class and starting offset.
pub fn prototype_order(class: usize, offset: usize, num_prototypes: usize, length: usize) -> Vec<usize> {
    let p = num_prototypes;
    (0..length)
        .map(|t| match class {
            0 => (offset + t) % p,
            _ => (offset + p - t % p) % p,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SyntheticTaskConfig,
    /// `P x D`, unit-norm rows.
    pub prototypes: Matrix,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

impl SyntheticDataset {
    pub fn class_names(&self) -> Vec<String> {
        CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    }

    /// Writes one feature file per sample under `dir/features/` plus
    /// `dir/manifest.toml`, returning the manifest path.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join("manifest.toml");
        self.write_with_manifest(&path)?;
        Ok(path)
    }

    /// Writes the manifest to `manifest_path` and the feature files under
    /// `features/` beside it.
    pub fn write_with_manifest(&self, manifest_path: impl AsRef<Path>) -> Result<()> {
        let manifest_path = manifest_path.as_ref();
        let dir = manifest_path.parent().unwrap_or(Path::new(""));
        let mut entries = Vec::with_capacity(self.train.len() + self.val.len());
        for (split, samples) in [(Split::Train, &self.train), (Split::Val, &self.val)] {
            for s in samples {
                let rel = PathBuf::from("features").join(format!("{}.difx", s.id));
                write_feature_file(dir.join(&rel), &s.features)?;
                entries.push(ManifestEntry {
                    id: s.id.clone(),
                    feature_path: rel,
                    label: s.label,
                    split,
                });
            }
        }
        let manifest = DatasetManifest {
            classes: self.class_names(),
            samples: entries,
        };
        write_manifest(manifest_path, &manifest)
    }
}

/// Builds the dataset in memory. Frame values are rounded through `f32` so
/// the in-memory samples equal what a feature-file round trip returns.
pub fn synth_order_task(config: &SyntheticTaskConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = Rng::stream(config.seed, StreamFamily::Synth, 0);
    let (p, d) = (config.num_prototypes, config.feature_dim);

    let mut prototypes = Matrix::zeros(p, d);
    for i in 0..p {
        let row = prototypes.row_mut(i);
        loop {
            row.iter_mut().for_each(|v| *v = rng.standard_normal());
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                row.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }

    let mut make_split = |name: &str, per_class: usize| -> Result<Vec<Sample>> {
        let mut out = Vec::with_capacity(2 * per_class);
        for i in 0..per_class {
            for class in 0..2 {
                let offset = rng.below(p);
                let order = prototype_order(class, offset, p, config.sequence_length);
                let mut frames = Matrix::zeros(config.sequence_length, d);
                for (t, &proto) in order.iter().enumerate() {
                    for (dst, &base) in frames.row_mut(t).iter_mut().zip(prototypes.row(proto)) {
                        let v = base + config.noise_sigma * rng.standard_normal();
                        *dst = f64::from(v as f32);
                    }
                }
                out.push(Sample {
                    id: format!("{name}-{:05}", 2 * i + class),
                    label: class,
                    features: FrameFeatureSequence::new(frames)?,
                });
            }
        }
        Ok(out)
    };
    let train = make_split("train", config.samples_per_class)?;
    let val = make_split("val", config.val_samples_per_class)?;
    Ok(SyntheticDataset {
        config: config.clone(),
        prototypes,
        train,
        val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_at_offset_zero() {
        assert_eq!(prototype_order(0, 0, 4, 8), vec![0, 1, 2, 3, 0, 1, 2, 3]);
        assert_eq!(prototype_order(1, 0, 4, 8), vec![0, 3, 2, 1, 0, 3, 2, 1]);
        assert_eq!(prototype_order(1, 2, 4, 5), vec![2, 1, 0, 3, 2]);
    }

    #[test]
    fn multisets_match_at_equal_offset() {
        for offset in 0..4 {
            let mut a = prototype_order(0, offset, 4, 8);
            let mut b = prototype_order(1, offset, 4, 8);
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn noiseless_means_coincide() {
        let cfg = SyntheticTaskConfig {
            noise_sigma: 0.0,
            samples_per_class: 4,
            val_samples_per_class: 1,
            ..Default::default()
        };
        let ds = synth_order_task(&cfg).unwrap();
        let asc = &ds.train.iter().find(|s| s.label == 0).unwrap().features;
        let desc = &ds.train.iter().find(|s| s.label == 1).unwrap().features;
        let ma = asc.features().column_means();
        let md = desc.features().column_means();
        for (a, b) in ma.iter().zip(&md) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn balanced_and_deterministic() {
        let cfg = SyntheticTaskConfig {
            samples_per_class: 5,
            val_samples_per_class: 3,
            seed: 9,
            ..Default::default()
        };
        let a = synth_order_task(&cfg).unwrap();
        let b = synth_order_task(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.train.len(), 10);
        assert_eq!(a.val.len(), 6);
        assert_eq!(a.train.iter().filter(|s| s.label == 1).count(), 5);
        for i in 0..4 {
            let n: f64 = a.prototypes.row(i).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SyntheticTaskConfig { num_prototypes: 2, ..Default::default() },
            SyntheticTaskConfig { sequence_length: 1, ..Default::default() },
            SyntheticTaskConfig { noise_sigma: -1.0, ..Default::default() },
        ] {
            assert!(synth_order_task(&cfg).is_err());
        }
    }
}

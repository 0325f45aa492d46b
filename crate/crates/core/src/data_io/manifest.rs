//! Dataset manifests: a TOML document naming the classes and listing every
//! sample with its feature file, label and split.
//!
//! ```toml
//! classes = ["ascending", "descending"]
//!
//! [[samples]]
//! id = "train-00000"
//! feature_path = "features/train-00000.difx"   # relative to the manifest
//! label = 0
//! split = "train"                              # train | val | test
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::feature_file::read_feature_file;
use super::{read_all, write_atomic, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split {other:?} (expected train, val or test)"
            ))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Class names; a sample's label indexes this list.
    pub classes: Vec<String>,
    #[serde(default)]
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Structural checks that need no file system access.
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Validation("manifest declares no classes".into()));
        }
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {:?}", s.id)));
            }
            if s.label >= self.classes.len() {
                return Err(Error::Validation(format!(
                    "sample {:?} has label {} but only {} classes exist",
                    s.id,
                    s.label,
                    self.classes.len()
                )));
            }
        }
        Ok(())
    }

    /// Entries of one split, in document order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// A validated manifest whose feature files all exist.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    base_dir: PathBuf,
}

impl LoadedManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.feature_path)
    }

    pub fn entries(&self, split: Split) -> Vec<&ManifestEntry> {
        self.manifest.split(split).collect()
    }

    /// Reads every feature file of `split`, in document order.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.manifest
            .split(split)
            .map(|e| {
                Ok(Sample {
                    id: e.id.clone(),
                    label: e.label,
                    features: read_feature_file(self.resolve(e))?,
                })
            })
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.classes.len()
    }
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadedManifest> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
    let manifest = parse_manifest(&text, path)?;
    manifest.validate()?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let loaded = LoadedManifest { manifest, base_dir };
    for entry in &loaded.manifest.samples {
        let resolved = loaded.resolve(entry);
        if !resolved.is_file() {
            return Err(Error::Validation(format!(
                "sample {:?}: feature file {} not found",
                entry.id,
                resolved.display()
            )));
        }
    }
    Ok(loaded)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    manifest.validate()?;
    let text = toml::to_string(manifest).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    write_atomic(path.as_ref(), text.as_bytes())
}

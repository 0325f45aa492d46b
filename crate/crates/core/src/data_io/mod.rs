//! Persistence and ingestion: per-video feature files, dataset manifests,
//! model checkpoints and the synthetic temporal-order task.
//!
//! Writers go through a temporary file in the destination directory and an
//! atomic rename, so readers never observe a partially written file.

mod bytes;
pub mod checkpoint;
pub mod feature_file;
pub mod manifest;
pub mod synth;

use std::io::Write;
use std::path::Path;

use crate::denseimage::FrameFeatureSequence;
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CheckpointConfig};
pub use feature_file::{read_feature_file, write_feature_file};
pub use manifest::{load_manifest, write_manifest, DatasetManifest, LoadedManifest, ManifestEntry, Split};
pub use synth::{synth_order_task, SyntheticDataset, SyntheticTaskConfig};

/// One labelled video held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub features: FrameFeatureSequence,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_all(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

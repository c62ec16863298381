//! Shared dataset access for the commands: manifest reading and in-memory
//! split loading.

use std::path::Path;

use anyhow::{bail, Context, Result};
use latentmorph_core::data::{load_sample, manifest_path, read_manifest, ManifestRecord, VoxelSample};

pub struct LoadedSplit {
    pub records: Vec<ManifestRecord>,
    pub samples: Vec<VoxelSample<f32>>,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }
}

pub fn read_records(dataset_dir: &Path) -> Result<Vec<ManifestRecord>> {
    let path = manifest_path(dataset_dir);
    read_manifest(&path).with_context(|| format!("reading manifest {}", path.display()))
}

pub fn load_split(dataset_dir: &Path, split: &str) -> Result<LoadedSplit> {
    let records: Vec<ManifestRecord> = read_records(dataset_dir)?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        bail!("split '{split}' is empty in {}", dataset_dir.display());
    }
    let mut samples = Vec::with_capacity(records.len());
    for r in &records {
        samples.push(
            load_sample::<f32>(r, dataset_dir)
                .with_context(|| format!("loading sample {}", r.file))?,
        );
    }
    Ok(LoadedSplit { records, samples })
}

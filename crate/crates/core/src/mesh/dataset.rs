use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{read_graph_file, write_graph_file, GraphSidecar};
use super::{generate_mesh, synthesize_field, FieldStats, GeometrySpec, MeshGraph};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A trajectory of independent snapshots on one fixed mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub geometry: GeometrySpec,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub file: String,
    pub split: Split,
    pub time: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub stats: FieldStats,
    pub snapshots: Vec<SnapshotEntry>,
}

impl DatasetSpec {
    /// Snapshot times and noise seeds in manifest order.
    fn schedule(&self) -> Vec<(Split, f64, u64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_f10e);
        let splits = std::iter::repeat_n(Split::Train, self.train)
            .chain(std::iter::repeat_n(Split::Val, self.val))
            .chain(std::iter::repeat_n(Split::Test, self.test));
        splits
            .map(|s| (s, rng.random::<f64>() * 2.0 * PI, rng.random::<u64>()))
            .collect()
    }

    /// Generates all snapshots in memory (raw units) plus train-split stats.
    pub fn build(&self) -> Result<(Vec<(Split, MeshGraph)>, FieldStats)> {
        if self.train == 0 {
            return invalid("dataset needs at least one training snapshot");
        }
        if self.noise_scale < 0.0 {
            return invalid("noise_scale must be non-negative");
        }
        let mesh = generate_mesh(&self.geometry)?;
        let snaps: Vec<(Split, MeshGraph)> = self
            .schedule()
            .into_iter()
            .map(|(s, t, seed)| (s, synthesize_field(&mesh, t, seed, self.noise_scale)))
            .collect();
        let stats = FieldStats::from_meshes(snaps.iter().filter(|(s, _)| *s == Split::Train).map(|(_, m)| m))?;
        Ok((snaps, stats))
    }
}

/// Writes every snapshot plus `manifest.json` into `dir`.
pub fn generate_dataset(spec: &DatasetSpec, dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let (snaps, stats) = spec.build()?;
    let schedule = spec.schedule();
    let mut entries = Vec::with_capacity(snaps.len());
    for (k, ((split, mesh), (_, time, noise_seed))) in snaps.iter().zip(schedule).enumerate() {
        let file = format!("snap_{k:05}.frg");
        let side = GraphSidecar {
            geometry: spec.geometry.clone(),
            stats: Some(stats),
            time,
            noise_seed,
        };
        write_graph_file(&dir.join(&file), mesh, &side)?;
        entries.push(SnapshotEntry {
            file,
            split: *split,
            time,
            noise_seed,
        });
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        stats,
        snapshots: entries,
    };
    let f = File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let f = File::open(&path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn count(&self, split: Split) -> usize {
        self.snapshots.iter().filter(|s| s.split == split).count()
    }
}

/// Reads the snapshots of one split, in raw units.
pub fn load_split(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<MeshGraph>> {
    manifest
        .snapshots
        .iter()
        .filter(|s| s.split == split)
        .map(|s| read_graph_file(&dir.join(&s.file)).map(|(m, _)| m))
        .collect()
}

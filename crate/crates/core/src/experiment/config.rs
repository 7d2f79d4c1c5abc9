use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mesh::{DatasetSpec, GeometrySpec, MaskStrategy, DEFAULT_NOISE_SCALE};
use crate::model::{ModelConfig, TrainConfig};
use crate::placement::{PolicyConfig, PpoConfig};

/// Sensor placement strategies compared at a fixed density.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementMethod {
    Uniform,
    Random,
    Qr,
    Dopt,
    Policy,
}

impl PlacementMethod {
    pub const ALL: [PlacementMethod; 5] = [
        PlacementMethod::Uniform,
        PlacementMethod::Random,
        PlacementMethod::Qr,
        PlacementMethod::Dopt,
        PlacementMethod::Policy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlacementMethod::Uniform => "uniform",
            PlacementMethod::Random => "random",
            PlacementMethod::Qr => "qr",
            PlacementMethod::Dopt => "dopt",
            PlacementMethod::Policy => "policy",
        }
    }
}

impl std::fmt::Display for PlacementMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub densities: Vec<f64>,
    pub strategies: Vec<MaskStrategy>,
    /// Neighbours used by the interpolation baseline.
    pub knn: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            densities: vec![0.05, 0.10, 0.20, 0.30],
            strategies: vec![MaskStrategy::Uniform, MaskStrategy::Random],
            knn: crate::baselines::DEFAULT_KNN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementConfig {
    pub density: f64,
    /// Snapshot modes used by the QR and D-optimal baselines.
    pub basis_rank: usize,
    pub methods: Vec<PlacementMethod>,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            density: 0.10,
            basis_rank: 20,
            methods: PlacementMethod::ALL.to_vec(),
        }
    }
}

/// One experiment: data, models, schedules and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Seeds the model, training, policy and evaluation streams; the dataset
    /// keeps its own seed so that runs with different seeds share data.
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub placement: PlacementConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSpec {
                geometry: GeometrySpec::sphere(1.0, 256, 6, 0),
                train: 200,
                val: 10,
                test: 40,
                noise_scale: DEFAULT_NOISE_SCALE,
                seed: 0,
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            placement: PlacementConfig::default(),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies a seed override and copies the run seed into every component.
    pub fn resolved(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        self.policy.seed = self.seed;
        self.ppo.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) | Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        self.dataset.geometry.validate().map_err(cfg)?;
        if self.dataset.train == 0 || self.dataset.test == 0 {
            return Err(Error::Config("dataset needs training and test snapshots".into()));
        }
        self.model.validate().map_err(cfg)?;
        self.policy.validate()?;
        self.ppo.validate()?;
        let densities = self.eval.densities.iter().chain(&self.train.densities).chain([&self.placement.density]);
        for &d in densities {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("density {d} outside (0, 1]")));
            }
        }
        if self.eval.densities.is_empty() || self.eval.strategies.is_empty() || self.eval.knn == 0 {
            return Err(Error::Config("eval needs densities, strategies and knn >= 1".into()));
        }
        if self.placement.basis_rank == 0 {
            return Err(Error::Config("basis_rank must be positive".into()));
        }
        Ok(())
    }

    /// Short SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        short_hash(&json)
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// [`short_hash`] of the concatenated contents of `paths`.
pub fn file_hash(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::MissingArtifact(format!("{}: {e}", p.display())))?;
        h.update(&bytes);
    }
    Ok(h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect())
}

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{file_hash, ExperimentConfig, PlacementMethod};
use crate::baselines::{build_basis, d_optimal_order, qr_pivot_order};
use crate::error::{Error, Result};
use crate::mesh::{
    generate_dataset, load_split, make_mask, sensor_count, DatasetManifest, FieldStats, MaskStrategy, MeshGraph,
    SensorMask, Split,
};
use crate::model::{eval_seeds, train_reconstruction_with, EpochMetrics, ReconModel};
use crate::placement::{
    reward, IterationLog, KnnReconstructor, MeanReconstructor, PolicyNet, PpoAgent, ReconReward, Reconstructor,
    ValueNet,
};

/// Offsets the run seed for evaluation masks and placeholders.
const EVAL_SALT: u64 = 0x0e7a_15a1;

/// Process exit status for an error: 2 configuration, 3 numerical failure,
/// 4 missing artifact, 1 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::NonFinite(_) | Error::Numerical(_) => 3,
        Error::MissingArtifact(_) => 4,
        Error::Io(io) if io.kind() == ErrorKind::NotFound => 4,
        _ => 1,
    }
}

/// A resolved configuration bound to an output directory.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub config_hash: String,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Self {
        let config_hash = config.hash();
        Self {
            config,
            out: out.into(),
            config_hash,
        }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn recon_checkpoint(&self) -> PathBuf {
        self.out.join("recon").join("model.frp")
    }

    pub fn policy_checkpoint(&self) -> PathBuf {
        self.out.join("policy").join("policy.frp")
    }

    pub fn value_checkpoint(&self) -> PathBuf {
        self.out.join("policy").join("value.frp")
    }

    pub fn placement_file(&self, method: PlacementMethod) -> PathBuf {
        self.out.join("placements").join(format!("{method}.json"))
    }

    fn eval_seed(&self) -> u64 {
        self.config.seed.wrapping_add(EVAL_SALT)
    }

    fn write_config(&self) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join("config.toml"), self.config.to_toml()?)?;
        Ok(())
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

fn missing(path: &Path) -> Error {
    Error::MissingArtifact(path.display().to_string())
}

/// Normalised snapshots of every split.
pub struct LoadedData {
    pub manifest: DatasetManifest,
    pub stats: FieldStats,
    pub train: Vec<MeshGraph>,
    pub val: Vec<MeshGraph>,
    pub test: Vec<MeshGraph>,
    pub manifest_hash: String,
}

pub fn load_data(ctx: &RunContext) -> Result<LoadedData> {
    let dir = ctx.dataset_dir();
    let manifest = DatasetManifest::load(&dir).map_err(|_| {
        Error::Config(format!("{} holds no dataset; run `generate` with this config first", dir.display()))
    })?;
    if manifest.spec != ctx.config.dataset {
        return Err(Error::Config(format!("dataset in {} was generated from a different spec", dir.display())));
    }
    let stats = manifest.stats;
    let norm = |split| -> Result<Vec<MeshGraph>> {
        Ok(load_split(&manifest, &dir, split)?.iter().map(|m| stats.normalize(m)).collect())
    };
    let (train, val, test) = (norm(Split::Train)?, norm(Split::Val)?, norm(Split::Test)?);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!("dataset in {} has an empty train or test split", dir.display())));
    }
    Ok(LoadedData {
        manifest_hash: file_hash(&[&dir.join("manifest.json")])?,
        manifest,
        stats,
        train,
        val,
        test,
    })
}

fn load_recon(ctx: &RunContext) -> Result<(ReconModel, String)> {
    let path = ctx.recon_checkpoint();
    if !path.exists() {
        return Err(missing(&path));
    }
    let hash = file_hash(&[&path, &path.with_extension("json")])?;
    Ok((ReconModel::load(&path)?, hash))
}

pub fn cmd_generate(ctx: &RunContext) -> Result<DatasetManifest> {
    ctx.write_config()?;
    let manifest = generate_dataset(&ctx.config.dataset, &ctx.dataset_dir())?;
    log::info!(
        "wrote {} snapshots of {} nodes to {}",
        manifest.snapshots.len(),
        ctx.config.dataset.geometry.node_count,
        ctx.dataset_dir().display()
    );
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

pub fn cmd_train_recon(ctx: &RunContext) -> Result<Vec<EpochMetrics>> {
    let data = load_data(ctx)?;
    ctx.write_config()?;
    let mut model = ReconModel::new(ctx.config.model)?;
    log::info!("training {} with {} parameters", ctx.config.model.variant, model.num_parameters());
    let history = train_reconstruction_with(&mut model, &data.train, &data.val, &ctx.config.train, |m| {
        log::info!("epoch {} train {:.5} val {:?}", m.epoch, m.train_mse, m.val_mse);
    })?;
    let path = ctx.recon_checkpoint();
    fs::create_dir_all(path.parent().unwrap())?;
    model.save(&path)?;
    let hash = file_hash(&[&path, &path.with_extension("json")])?;
    let rows: Vec<TrainRow> = history
        .iter()
        .map(|m| TrainRow {
            epoch: m.epoch,
            train_mse: m.train_mse,
            val_mse: m.val_mse,
            seed: ctx.config.seed,
            config_hash: ctx.config_hash.clone(),
            checkpoint_hash: hash.clone(),
        })
        .collect();
    write_csv(&ctx.out.join("recon").join("train_log.csv"), &rows)?;
    Ok(history)
}

/// Mean masked MSE over snapshots with seeded masks and placeholders; the
/// same seeds give the same masks for every reconstructor.
pub fn evaluate_reconstructor<R: Reconstructor + ?Sized>(
    recon: &R,
    snaps: &[MeshGraph],
    density: f64,
    strategy: MaskStrategy,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, snap) in snaps.iter().enumerate() {
        let (mask_seed, fill_seed) = eval_seeds(seed, k);
        let mask = make_mask(snap, density, strategy, mask_seed)?;
        total -= reward(snap, &mask, recon, fill_seed)?;
    }
    let mse = total / snaps.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite(format!("evaluation at density {density}")));
    }
    Ok(mse)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: Split,
    /// `model`, `knn` or `mean`.
    pub method: String,
    /// Network variant for `model` rows.
    pub variant: String,
    pub density: f64,
    pub strategy: MaskStrategy,
    pub mse: f64,
    /// `mse` in units of 1e-4.
    pub mse_e4: f64,
    pub snapshots: usize,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

pub fn cmd_eval_recon(ctx: &RunContext) -> Result<Vec<EvalRow>> {
    let data = load_data(ctx)?;
    let (model, hash) = load_recon(ctx)?;
    let cfg = &ctx.config;
    let knn = KnnReconstructor(cfg.eval.knn);
    let methods: [(&str, String, &dyn Reconstructor); 3] = [
        ("model", model.config.variant.to_string(), &model),
        ("knn", String::new(), &knn),
        ("mean", String::new(), &MeanReconstructor),
    ];
    let mut rows = Vec::new();
    for (split, snaps) in [(Split::Train, &data.train), (Split::Test, &data.test)] {
        for &density in &cfg.eval.densities {
            for &strategy in &cfg.eval.strategies {
                for (method, variant, recon) in &methods {
                    let mse = evaluate_reconstructor(*recon, snaps, density, strategy, ctx.eval_seed())?;
                    log::info!("{split:?} {method} {variant} {density} {strategy:?}: {mse:.5}");
                    rows.push(EvalRow {
                        split,
                        method: method.to_string(),
                        variant: variant.clone(),
                        density,
                        strategy,
                        mse,
                        mse_e4: mse * 1e4,
                        snapshots: snaps.len(),
                        seed: cfg.seed,
                        config_hash: ctx.config_hash.clone(),
                        checkpoint_hash: hash.clone(),
                    });
                }
            }
        }
    }
    write_csv(&ctx.out.join("eval_recon.csv"), &rows)?;
    Ok(rows)
}

/// Sensor sets of one classical method at several densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementFile {
    pub method: PlacementMethod,
    pub node_count: usize,
    pub basis_rank: usize,
    pub placements: Vec<Placement>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub density: f64,
    pub indices: Vec<usize>,
}

impl PlacementFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|_| missing(path))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    pub fn mask_at(&self, density: f64) -> Result<SensorMask> {
        let p = self
            .placements
            .iter()
            .find(|p| p.density == density)
            .ok_or_else(|| Error::Config(format!("no {} placement at density {density}", self.method)))?;
        SensorMask::from_indices(self.node_count, &p.indices)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRow {
    pub method: PlacementMethod,
    pub density: f64,
    pub sensors: usize,
    /// Space-separated node indices in selection order.
    pub indices: String,
    pub seed: u64,
    pub config_hash: String,
    /// Hash of the dataset manifest the basis was built from.
    pub checkpoint_hash: String,
}

/// QR-pivoting or D-optimal placements from the training-snapshot basis,
/// at every evaluation density and the placement density.
pub fn cmd_place(ctx: &RunContext, method: PlacementMethod) -> Result<PlacementFile> {
    let data = load_data(ctx)?;
    let cfg = &ctx.config;
    let n = data.train[0].node_count();
    let mut densities = cfg.eval.densities.clone();
    densities.push(cfg.placement.density);
    densities.sort_by(f64::total_cmp);
    densities.dedup();
    let m_max = densities.iter().map(|&d| sensor_count(n, d)).collect::<Result<Vec<_>>>()?.into_iter().max().unwrap();
    let basis = build_basis(&data.train, cfg.placement.basis_rank)?;
    // both greedy orders are nested, so one run serves every density
    let order = match method {
        PlacementMethod::Qr => qr_pivot_order(&basis, m_max)?,
        PlacementMethod::Dopt => d_optimal_order(&basis, m_max)?.0,
        other => return Err(Error::Config(format!("`place` computes qr or dopt, not {other}"))),
    };
    let placements: Vec<Placement> = densities
        .iter()
        .map(|&density| {
            Ok(Placement {
                density,
                indices: order[..sensor_count(n, density)?].to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    let file = PlacementFile {
        method,
        node_count: n,
        basis_rank: basis.rank(),
        placements,
        seed: cfg.seed,
        config_hash: ctx.config_hash.clone(),
    };
    let path = ctx.placement_file(method);
    fs::create_dir_all(path.parent().unwrap())?;
    fs::write(&path, serde_json::to_string_pretty(&file)?)?;
    let rows: Vec<PlacementRow> = file
        .placements
        .iter()
        .map(|p| PlacementRow {
            method,
            density: p.density,
            sensors: p.indices.len(),
            indices: p.indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
            seed: cfg.seed,
            config_hash: ctx.config_hash.clone(),
            checkpoint_hash: data.manifest_hash.clone(),
        })
        .collect();
    write_csv(&ctx.out.join("placements").join(format!("{method}.csv")), &rows)?;
    Ok(file)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyLogRow {
    pub iteration: usize,
    pub stage: String,
    pub mean_reward: f64,
    pub mean_violation: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

pub fn cmd_train_policy(ctx: &RunContext) -> Result<Vec<IterationLog>> {
    let data = load_data(ctx)?;
    let (recon, _) = load_recon(ctx)?;
    let cfg = &ctx.config;
    let mut agent = PpoAgent::new(cfg.policy)?;
    let log = agent.train_two_step(&data.train, &ReconReward(&recon), &cfg.ppo, |r| {
        if r.iteration % 10 == 0 {
            log::info!(
                "iteration {} {} reward {:.5} violation {:.3} value loss {:.5}",
                r.iteration,
                r.stage,
                r.mean_reward,
                r.mean_violation,
                r.value_loss
            );
        }
    })?;
    let (p, v) = (ctx.policy_checkpoint(), ctx.value_checkpoint());
    fs::create_dir_all(p.parent().unwrap())?;
    agent.policy.save(&p)?;
    agent.value.save(&v)?;
    let hash = file_hash(&[&p, &p.with_extension("json"), &v, &v.with_extension("json")])?;
    let rows: Vec<PolicyLogRow> = log
        .iter()
        .map(|r| PolicyLogRow {
            iteration: r.iteration,
            stage: r.stage.to_string(),
            mean_reward: r.mean_reward,
            mean_violation: r.mean_violation,
            value_loss: r.value_loss,
            clip_fraction: r.clip_fraction,
            seed: cfg.seed,
            config_hash: ctx.config_hash.clone(),
            checkpoint_hash: hash.clone(),
        })
        .collect();
    write_csv(&ctx.out.join("policy").join("train_log.csv"), &rows)?;
    Ok(log)
}

/// Per-snapshot masked MSE of `recon` for masks chosen by `place`; fill
/// seeds depend only on `seed` and the snapshot index.
pub fn placement_errors<R, F>(recon: &R, snaps: &[MeshGraph], seed: u64, mut place: F) -> Result<Vec<f64>>
where
    R: Reconstructor + ?Sized,
    F: FnMut(usize, &MeshGraph, u64) -> Result<SensorMask>,
{
    snaps
        .iter()
        .enumerate()
        .map(|(k, snap)| {
            let (mask_seed, fill_seed) = eval_seeds(seed, k);
            let mask = place(k, snap, mask_seed)?;
            Ok(-reward(snap, &mask, recon, fill_seed)?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceEvalRow {
    pub method: PlacementMethod,
    pub density: f64,
    pub sensors: usize,
    pub mse: f64,
    pub mse_e4: f64,
    /// Standard deviation over snapshots.
    pub std: f64,
    pub snapshots: usize,
    pub seed: u64,
    pub config_hash: String,
    pub checkpoint_hash: String,
}

pub fn cmd_eval_place(ctx: &RunContext) -> Result<Vec<PlaceEvalRow>> {
    let data = load_data(ctx)?;
    let (recon, recon_hash) = load_recon(ctx)?;
    let cfg = &ctx.config;
    let density = cfg.placement.density;
    let n = data.test[0].node_count();
    let m = sensor_count(n, density)?;
    let mut rows = Vec::new();
    for &method in &cfg.placement.methods {
        let mut hash = recon_hash.clone();
        let errors = match method {
            PlacementMethod::Uniform | PlacementMethod::Random => {
                let strategy = if method == PlacementMethod::Uniform {
                    MaskStrategy::Uniform
                } else {
                    MaskStrategy::Random
                };
                placement_errors(&recon, &data.test, ctx.eval_seed(), |_, s, seed| make_mask(s, density, strategy, seed))?
            }
            PlacementMethod::Qr | PlacementMethod::Dopt => {
                let path = ctx.placement_file(method);
                let mask = PlacementFile::load(&path)?.mask_at(density)?;
                hash = file_hash(&[&ctx.recon_checkpoint(), &path])?;
                placement_errors(&recon, &data.test, ctx.eval_seed(), |_, _, _| Ok(mask.clone()))?
            }
            PlacementMethod::Policy => {
                let path = ctx.policy_checkpoint();
                if !path.exists() {
                    return Err(missing(&path));
                }
                let policy = PolicyNet::load(&path)?;
                hash = file_hash(&[&ctx.recon_checkpoint(), &path])?;
                placement_errors(&recon, &data.test, ctx.eval_seed(), |_, s, seed| policy.place(s, m, seed))?
            }
        };
        let k = errors.len() as f64;
        let mse = errors.iter().sum::<f64>() / k;
        let std = (errors.iter().map(|e| (e - mse).powi(2)).sum::<f64>() / k).sqrt();
        if !mse.is_finite() {
            return Err(Error::NonFinite(format!("{method} placement error")));
        }
        log::info!("{method}: {mse:.5} ± {std:.5}");
        rows.push(PlaceEvalRow {
            method,
            density,
            sensors: m,
            mse,
            mse_e4: mse * 1e4,
            std,
            snapshots: errors.len(),
            seed: cfg.seed,
            config_hash: ctx.config_hash.clone(),
            checkpoint_hash: hash,
        });
    }
    write_csv(&ctx.out.join("eval_place.csv"), &rows)?;
    Ok(rows)
}

/// Loads a policy checkpoint together with its critic.
pub fn load_agent(ctx: &RunContext) -> Result<PpoAgent> {
    let (p, v) = (ctx.policy_checkpoint(), ctx.value_checkpoint());
    for path in [&p, &v] {
        if !path.exists() {
            return Err(missing(path));
        }
    }
    Ok(PpoAgent::from_nets(PolicyNet::load(&p)?, ValueNet::load(&v)?))
}

pub(super) fn read_eval_rows(dir: &Path) -> Result<Option<Vec<EvalRow>>> {
    let path = dir.join("eval_recon.csv");
    if !path.exists() {
        return Ok(None);
    }
    read_csv(&path).map(Some)
}

pub(super) fn read_place_rows(dir: &Path) -> Result<Option<Vec<PlaceEvalRow>>> {
    let path = dir.join("eval_place.csv");
    if !path.exists() {
        return Ok(None);
    }
    read_csv(&path).map(Some)
}

pub(super) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv(path, rows)
}

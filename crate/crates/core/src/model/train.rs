use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::recon::{masked_mse, masked_mse_var, ReconModel};
use crate::autodiff::{cosine_lr, Adam, Tape};
use crate::error::{invalid, Error, Result};
use crate::mesh::{apply_mask, make_mask, MaskStrategy, MeshGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// A density and a strategy are drawn per snapshot per epoch.
    pub densities: Vec<f64>,
    pub strategies: Vec<MaskStrategy>,
    /// Validation masks.
    pub eval_density: f64,
    pub eval_strategy: MaskStrategy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            lr_start: 1e-4,
            lr_end: 1e-5,
            densities: vec![0.05, 0.10, 0.20, 0.30],
            strategies: vec![MaskStrategy::Uniform, MaskStrategy::Random],
            eval_density: 0.10,
            eval_strategy: MaskStrategy::Uniform,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

/// Minimises the masked MSE over normalised training snapshots with freshly
/// drawn masks. Returns one metrics row per epoch.
pub fn train_reconstruction(
    model: &mut ReconModel,
    train: &[MeshGraph],
    val: &[MeshGraph],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    train_reconstruction_with(model, train, val, cfg, |_| {})
}

pub fn train_reconstruction_with<F: FnMut(&EpochMetrics)>(
    model: &mut ReconModel,
    train: &[MeshGraph],
    val: &[MeshGraph],
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>> {
    if train.is_empty() {
        return invalid("no training snapshots");
    }
    if cfg.densities.is_empty() || cfg.strategies.is_empty() || cfg.batch_size == 0 {
        return invalid("training needs densities, strategies and a positive batch size");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.params);
    let batches_per_epoch = train.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.params.zero_grads();
            for &k in batch {
                let density = cfg.densities[rng.random_range(0..cfg.densities.len())];
                let strategy = cfg.strategies[rng.random_range(0..cfg.strategies.len())];
                let (mask_seed, fill_seed) = (rng.random::<u64>(), rng.random::<u64>());
                let mask = make_mask(&train[k], density, strategy, mask_seed)?;
                if mask.count() == mask.len() {
                    continue;
                }
                let input = apply_mask(&train[k], &mask, fill_seed)?;
                let mut tape = Tape::new();
                let pred = model.forward(&mut tape, &input).map_err(diverged(epoch))?;
                let loss = masked_mse_var(&mut tape, pred, &train[k], &mask)?;
                let scaled = tape.scale(loss, 1.0 / batch.len() as f64)?;
                epoch_loss += tape.value(loss).item();
                tape.backward(scaled, &mut model.params)?;
            }
            if model.params.grad_norm().is_nan() {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}")));
            }
            let lr = cosine_lr(cfg.lr_start, cfg.lr_end, epoch * batches_per_epoch + b, total_steps);
            adam.step(&mut model.params, lr);
        }
        let train_mse = epoch_loss / train.len() as f64;
        if !train_mse.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let val_mse = if val.is_empty() {
            None
        } else {
            Some(evaluate(model, val, cfg.eval_density, cfg.eval_strategy, cfg.seed ^ 0x7a1)?)
        };
        let row = EpochMetrics {
            epoch,
            train_mse,
            val_mse,
        };
        on_epoch(&row);
        history.push(row);
    }
    Ok(history)
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}")),
        other => other,
    }
}

/// Mask and placeholder seeds used for snapshot `k` of an evaluation run.
pub fn eval_seeds(seed: u64, k: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 0x9e37_79b9));
    (rng.random(), rng.random())
}

/// Mean masked MSE over normalised snapshots with seeded masks.
pub fn evaluate(
    model: &ReconModel,
    snapshots: &[MeshGraph],
    density: f64,
    strategy: MaskStrategy,
    seed: u64,
) -> Result<f64> {
    let mut total = 0.0;
    for (k, snap) in snapshots.iter().enumerate() {
        let (mask_seed, fill_seed) = eval_seeds(seed, k);
        let mask = make_mask(snap, density, strategy, mask_seed)?;
        let input = apply_mask(snap, &mask, fill_seed)?;
        let pred = model.reconstruct(&input)?;
        total += masked_mse(&pred, &snap.field_rows(), &mask)?;
    }
    Ok(total / snapshots.len().max(1) as f64)
}

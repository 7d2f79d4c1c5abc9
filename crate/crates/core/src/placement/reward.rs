use crate::autodiff::Tensor;
use crate::baselines::{knn_impute, mean_impute};
use crate::error::{invalid, Result};
use crate::mesh::{apply_mask, MeshGraph, SensorMask};
use crate::model::{masked_mse, ReconModel};

/// Anything that maps a masked mesh to `n × 4` field predictions.
pub trait Reconstructor {
    fn reconstruct(&self, masked: &MeshGraph) -> Result<Tensor>;
}

impl Reconstructor for ReconModel {
    fn reconstruct(&self, masked: &MeshGraph) -> Result<Tensor> {
        ReconModel::reconstruct(self, masked)
    }
}

/// Per-channel mean over sensors.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeanReconstructor;

impl Reconstructor for MeanReconstructor {
    fn reconstruct(&self, masked: &MeshGraph) -> Result<Tensor> {
        mean_impute(masked)
    }
}

/// Inverse-square-distance interpolation from the `k` nearest sensors.
#[derive(Clone, Copy, Debug)]
pub struct KnnReconstructor(pub usize);

impl Reconstructor for KnnReconstructor {
    fn reconstruct(&self, masked: &MeshGraph) -> Result<Tensor> {
        knn_impute(masked, self.0)
    }
}

/// Negated masked MSE of `recon` on `mesh` sensed at `mask`.
pub fn reward(mesh: &MeshGraph, mask: &SensorMask, recon: &(impl Reconstructor + ?Sized), fill_seed: u64) -> Result<f64> {
    if mask.count() == mask.len() {
        return invalid("reward needs at least one unsensed node");
    }
    let masked = apply_mask(mesh, mask, fill_seed)?;
    let pred = recon.reconstruct(&masked)?;
    Ok(-masked_mse(&pred, &mesh.field_rows(), mask)?)
}

/// Scores a placement on a graph. Implemented by reconstruction rewards and by
/// plain closures (for synthetic objectives).
pub trait RewardModel {
    fn reward(&self, mesh: &MeshGraph, mask: &SensorMask, fill_seed: u64) -> Result<f64>;
}

impl<F> RewardModel for F
where
    F: Fn(&MeshGraph, &SensorMask, u64) -> Result<f64>,
{
    fn reward(&self, mesh: &MeshGraph, mask: &SensorMask, fill_seed: u64) -> Result<f64> {
        self(mesh, mask, fill_seed)
    }
}

/// `reward` against a frozen reconstructor.
pub struct ReconReward<'a, R: ?Sized>(pub &'a R);

impl<R: Reconstructor + ?Sized> RewardModel for ReconReward<'_, R> {
    fn reward(&self, mesh: &MeshGraph, mask: &SensorMask, fill_seed: u64) -> Result<f64> {
        reward(mesh, mask, self.0, fill_seed)
    }
}

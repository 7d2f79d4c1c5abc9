use crate::autodiff::Tensor;
use crate::error::{invalid, Result};
use crate::mesh::{MeshGraph, CHANNELS};

pub const DEFAULT_KNN: usize = 4;

const DIST_FLOOR: f64 = 1e-12;

fn sensors(mesh: &MeshGraph) -> Result<Vec<usize>> {
    let s: Vec<usize> = (0..mesh.node_count()).filter(|&i| mesh.mask[i] != 0).collect();
    if s.is_empty() {
        return invalid("imputation needs at least one sensor");
    }
    Ok(s)
}

/// Unsensed nodes get the per-channel mean over sensors; sensors keep their
/// values.
pub fn mean_impute(mesh: &MeshGraph) -> Result<Tensor> {
    let s = sensors(mesh)?;
    let rows = mesh.field_rows();
    let mut mean = [0.0; CHANNELS];
    for &j in &s {
        for (m, v) in mean.iter_mut().zip(rows[j]) {
            *m += v / s.len() as f64;
        }
    }
    let data = (0..mesh.node_count())
        .flat_map(|i| if mesh.mask[i] != 0 { rows[i] } else { mean })
        .collect();
    Tensor::matrix(mesh.node_count(), CHANNELS, data)
}

/// Inverse-square-distance weighting of the `k` nearest sensors (all sensors
/// when fewer than `k`).
pub fn knn_impute(mesh: &MeshGraph, k: usize) -> Result<Tensor> {
    if k == 0 {
        return invalid("k must be positive");
    }
    let s = sensors(mesh)?;
    let rows = mesh.field_rows();
    let mut data = Vec::with_capacity(mesh.node_count() * CHANNELS);
    let mut near: Vec<(f64, usize)> = Vec::with_capacity(s.len());
    for (i, x) in mesh.positions.iter().enumerate() {
        if mesh.mask[i] != 0 {
            data.extend_from_slice(&rows[i]);
            continue;
        }
        near.clear();
        near.extend(s.iter().map(|&j| {
            let y = mesh.positions[j];
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
            (d2, j)
        }));
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut acc = [0.0; CHANNELS];
        let mut total = 0.0;
        for &(d2, j) in near.iter().take(k) {
            let w = 1.0 / d2.max(DIST_FLOOR * DIST_FLOOR);
            total += w;
            for (a, v) in acc.iter_mut().zip(rows[j]) {
                *a += w * v;
            }
        }
        data.extend(acc.iter().map(|a| a / total));
    }
    Tensor::matrix(mesh.node_count(), CHANNELS, data)
}

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::mesh::{MeshGraph, CHANNELS};

/// Leading left singular vectors of a snapshot matrix whose columns are
/// flattened `n × 4` fields (row `4i + c` is channel `c` of node `i`).
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBasis {
    /// `4n × r`, orthonormal columns.
    pub modes: DMatrix<f64>,
    /// Non-increasing, length `r`.
    pub singular_values: Vec<f64>,
    /// Squared Frobenius norm of the snapshot matrix.
    pub total_energy: f64,
}

impl SnapshotBasis {
    pub fn node_count(&self) -> usize {
        self.modes.nrows() / CHANNELS
    }

    pub fn rank(&self) -> usize {
        self.modes.ncols()
    }

    /// Fraction of snapshot energy captured by the retained modes.
    pub fn energy_fraction(&self) -> f64 {
        if self.total_energy == 0.0 {
            return 1.0;
        }
        self.singular_values.iter().map(|s| s * s).sum::<f64>() / self.total_energy
    }

    /// The `4 × r` block of node `i`.
    pub fn node_block(&self, i: usize) -> DMatrix<f64> {
        self.modes.rows(i * CHANNELS, CHANNELS).into_owned()
    }
}

/// Truncated SVD of already normalised snapshots sharing one mesh. `r` is
/// clamped to the numerical rank.
pub fn build_basis(snapshots: &[MeshGraph], r: usize) -> Result<SnapshotBasis> {
    let Some(first) = snapshots.first() else {
        return invalid("basis needs at least one snapshot");
    };
    if r == 0 {
        return invalid("basis needs at least one mode");
    }
    let n = first.node_count();
    if snapshots.iter().any(|s| s.node_count() != n) {
        return invalid("snapshots must share one mesh");
    }
    let x = DMatrix::from_fn(n * CHANNELS, snapshots.len(), |row, col| {
        let s = &snapshots[col];
        let (i, c) = (row / CHANNELS, row % CHANNELS);
        if c < 3 {
            s.velocity[i][c]
        } else {
            s.pressure[i]
        }
    });
    let total_energy = x.norm_squared();
    let svd = x.svd(true, false);
    let u = svd.u.unwrap();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let top = svd.singular_values[order[0]];
    let tol = top * (n * CHANNELS).max(snapshots.len()) as f64 * f64::EPSILON;
    let rank = order.iter().filter(|&&k| svd.singular_values[k] > tol).count().max(1);
    let keep = if r > rank {
        log::warn!("requested {r} modes but the snapshot matrix has rank {rank}; clamping");
        rank
    } else {
        r
    };
    let mut modes = DMatrix::zeros(n * CHANNELS, keep);
    for (dst, &src) in order.iter().take(keep).enumerate() {
        // sign convention: the largest-magnitude entry of every mode is positive
        let col = u.column(src);
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        modes.set_column(dst, &(col * sign));
    }
    Ok(SnapshotBasis {
        modes,
        singular_values: order.iter().take(keep).map(|&k| svd.singular_values[k]).collect(),
        total_energy,
    })
}

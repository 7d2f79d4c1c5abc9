use nalgebra::DMatrix;

use super::SnapshotBasis;
use crate::error::{invalid, Result};
use crate::mesh::{SensorMask, CHANNELS};

/// Ridge added inside the D-optimal log-determinant.
pub const D_OPT_EPS: f64 = 1e-9;

/// Blocks whose residual norm falls below this fraction of the largest
/// initial block norm count as exhausted and tie.
const EXHAUSTED: f64 = 1e-10;

fn check(basis: &SnapshotBasis, m: usize) -> Result<usize> {
    let n = basis.node_count();
    if m > n {
        return invalid(format!("cannot place {m} sensors on {n} nodes"));
    }
    Ok(n)
}

/// Column-pivoted QR on `Φᵀ` with each node's four columns pivoted as one
/// block scored by its residual Frobenius norm. Returns nodes in pivot order.
pub fn qr_pivot_order(basis: &SnapshotBasis, m: usize) -> Result<Vec<usize>> {
    let n = check(basis, m)?;
    // residual columns of Φᵀ, one r-vector per node-channel row of Φ
    let mut cols: Vec<Vec<f64>> = (0..basis.modes.nrows()).map(|row| basis.modes.row(row).iter().copied().collect()).collect();
    let block_norm = |cols: &[Vec<f64>], i: usize| -> f64 {
        cols[i * CHANNELS..(i + 1) * CHANNELS]
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let scale = (0..n).map(|i| block_norm(&cols, i)).fold(0.0, f64::max);
    let floor = scale * EXHAUSTED;
    let mut chosen = vec![false; n];
    let mut order = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best = None;
        let mut best_score = -1.0;
        for i in (0..n).filter(|&i| !chosen[i]) {
            let mut score = block_norm(&cols, i);
            if score < floor {
                score = 0.0;
            }
            if score > best_score {
                best_score = score;
                best = Some(i);
            }
        }
        let p = best.unwrap();
        chosen[p] = true;
        order.push(p);
        // orthonormalise the pivot block, then deflate every column against it
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(CHANNELS);
        for c in 0..CHANNELS {
            let mut v = cols[p * CHANNELS + c].clone();
            for e in &q {
                let d: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(e).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > floor.max(f64::MIN_POSITIVE) {
                q.push(v.iter().map(|a| a / norm).collect());
            }
        }
        for col in cols.iter_mut() {
            for e in &q {
                let d: f64 = col.iter().zip(e).map(|(a, b)| a * b).sum();
                col.iter_mut().zip(e).for_each(|(a, b)| *a -= d * b);
            }
        }
    }
    Ok(order)
}

pub fn qr_pivot_placement(basis: &SnapshotBasis, m: usize) -> Result<SensorMask> {
    let n = basis.node_count();
    SensorMask::from_indices(n, &qr_pivot_order(basis, m)?)
}

/// `log det(ε I_r + Σ_{i∈S} Φᵢᵀ Φᵢ)` over the node blocks `Φᵢ` of `nodes`.
pub fn d_optimal_objective(basis: &SnapshotBasis, nodes: &[usize]) -> f64 {
    let r = basis.rank();
    let mut info = DMatrix::identity(r, r) * D_OPT_EPS;
    for &i in nodes {
        let b = basis.node_block(i);
        info += b.transpose() * b;
    }
    log_det_spd(info)
}

fn log_det_spd(a: DMatrix<f64>) -> f64 {
    match a.clone().cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => a.determinant().abs().ln(),
    }
}

/// Greedy D-optimal selection. Returns nodes in selection order and the
/// objective after every step.
///
/// The information form `ε I_r + Σ Φᵢᵀ Φᵢ` shares its per-step argmax with
/// the `4|S| × 4|S|` form `C_S Φ Φᵀ C_Sᵀ + ε I` (their determinants differ by
/// the factor `ε^(4|S| - r)`, identical across candidates of one step) and is
/// non-decreasing as nodes are added.
pub fn d_optimal_order(basis: &SnapshotBasis, m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    let n = check(basis, m)?;
    let r = basis.rank();
    let blocks: Vec<DMatrix<f64>> = (0..n).map(|i| basis.node_block(i)).collect();
    let mut info = DMatrix::identity(r, r) * D_OPT_EPS;
    let mut chosen = vec![false; n];
    let (mut order, mut trace) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for _ in 0..m {
        let mut best = None;
        let mut best_val = f64::NEG_INFINITY;
        for i in (0..n).filter(|&i| !chosen[i]) {
            let cand = &info + blocks[i].transpose() * &blocks[i];
            let val = log_det_spd(cand);
            if val > best_val {
                best_val = val;
                best = Some(i);
            }
        }
        let p = best.unwrap();
        chosen[p] = true;
        info += blocks[p].transpose() * &blocks[p];
        order.push(p);
        trace.push(best_val);
    }
    Ok((order, trace))
}

pub fn d_optimal_placement(basis: &SnapshotBasis, m: usize) -> Result<SensorMask> {
    let n = basis.node_count();
    SensorMask::from_indices(n, &d_optimal_order(basis, m)?.0)
}

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{distance, MeshGraph};
use crate::error::{invalid, Error, Result};

/// Binary sensor indicator over mesh nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorMask(Vec<bool>);

impl SensorMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn from_indices(n: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &i in indices {
            if i >= n {
                return invalid(format!("sensor index {i} outside {n} nodes"));
            }
            if bits[i] {
                return invalid(format!("duplicate sensor index {i}"));
            }
            bits[i] = true;
        }
        Ok(Self(bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn set(&mut self, i: usize, v: bool) {
        self.0[i] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i]).collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// `true` where the node carries no sensor.
    pub fn unsensed(&self) -> Vec<bool> {
        self.0.iter().map(|&b| !b).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    Uniform,
    Random,
}

/// `round(density * n)`, required to be at least one.
pub fn sensor_count(n: usize, density: f64) -> Result<usize> {
    if !(density > 0.0 && density <= 1.0) {
        return invalid(format!("density {density} outside (0, 1]"));
    }
    let m = (density * n as f64).round() as usize;
    if m == 0 {
        return invalid(format!("density {density} places no sensor on {n} nodes"));
    }
    Ok(m.min(n))
}

pub fn make_mask(mesh: &MeshGraph, density: f64, strategy: MaskStrategy, seed: u64) -> Result<SensorMask> {
    let n = mesh.node_count();
    let m = sensor_count(n, density)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = match strategy {
        MaskStrategy::Random => sample(&mut rng, n, m).into_vec(),
        MaskStrategy::Uniform => {
            let start = rng.random_range(0..n);
            farthest_point_sampling(&mesh.positions, m, start)
        }
    };
    SensorMask::from_indices(n, &indices)
}

/// Greedy max-min selection starting from `start`; ties go to the lower index.
pub fn farthest_point_sampling(positions: &[[f64; 3]], m: usize, start: usize) -> Vec<usize> {
    let n = positions.len();
    let mut chosen = Vec::with_capacity(m);
    if m == 0 || n == 0 {
        return chosen;
    }
    let mut min_dist = vec![f64::INFINITY; n];
    let mut next = start;
    for _ in 0..m.min(n) {
        chosen.push(next);
        min_dist[next] = f64::NEG_INFINITY;
        for j in 0..n {
            if min_dist[j] > f64::NEG_INFINITY {
                min_dist[j] = min_dist[j].min(distance(&positions[next], &positions[j]));
            }
        }
        let mut best = None;
        for (j, &d) in min_dist.iter().enumerate() {
            if d > f64::NEG_INFINITY && best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, j));
            }
        }
        match best {
            Some((_, j)) => next = j,
            None => break,
        }
    }
    chosen
}

/// Builds the model input: sensed nodes keep their (normalised) fields,
/// unsensed nodes get seeded standard-normal placeholders.
pub fn apply_mask(mesh: &MeshGraph, mask: &SensorMask, fill_seed: u64) -> Result<MeshGraph> {
    if mask.len() != mesh.node_count() {
        return Err(Error::Shape(format!(
            "mask of length {} for {} nodes",
            mask.len(),
            mesh.node_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(fill_seed);
    let mut out = mesh.clone();
    for i in 0..mesh.node_count() {
        if mask.get(i) {
            out.mask[i] = 1;
        } else {
            out.mask[i] = 0;
            for c in 0..3 {
                out.velocity[i][c] = StandardNormal.sample(&mut rng);
            }
            out.pressure[i] = StandardNormal.sample(&mut rng);
        }
    }
    Ok(out)
}

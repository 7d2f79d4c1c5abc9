//! Mesh graphs, synthetic flow snapshots, sensor masks and normalisation.

mod dataset;
mod field;
mod generate;
mod io;
mod mask;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use dataset::{generate_dataset, load_split, DatasetManifest, DatasetSpec, SnapshotEntry, Split};
pub use field::{analytic_field, synthesize_field, DEFAULT_NOISE_SCALE};
pub use generate::{generate_mesh, is_connected};
pub use io::{read_graph, read_graph_file, write_graph, write_graph_file, GraphSidecar};
pub use mask::{apply_mask, farthest_point_sampling, make_mask, sensor_count, MaskStrategy, SensorMask};

/// Field channels per node: u_x, u_y, u_z, p.
pub const CHANNELS: usize = 4;

/// Mesh graph with per-node flow fields and symmetric directed edges.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshGraph {
    pub positions: Vec<[f64; 3]>,
    pub velocity: Vec<[f64; 3]>,
    pub pressure: Vec<f64>,
    pub mask: Vec<u8>,
    pub edges: Vec<[usize; 2]>,
    /// Displacement `x_j - x_i` followed by its Euclidean norm.
    pub edge_attr: Vec<[f64; 4]>,
}

impl MeshGraph {
    /// Builds a graph with zeroed fields; edge attributes are derived from
    /// positions.
    pub fn from_positions(positions: Vec<[f64; 3]>, edges: Vec<[usize; 2]>) -> Result<Self> {
        let n = positions.len();
        let edge_attr = edges
            .iter()
            .map(|&[i, j]| {
                if i >= n || j >= n {
                    return Err(Error::InvalidArgument(format!("edge ({i},{j}) outside {n} nodes")));
                }
                Ok(edge_attributes(&positions[i], &positions[j]))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            velocity: vec![[0.0; 3]; n],
            pressure: vec![0.0; n],
            mask: vec![0; n],
            positions,
            edges,
            edge_attr,
        })
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Node fields as rows `[u_x, u_y, u_z, p]`.
    pub fn field_rows(&self) -> Vec<[f64; CHANNELS]> {
        self.velocity
            .iter()
            .zip(&self.pressure)
            .map(|(u, &p)| [u[0], u[1], u[2], p])
            .collect()
    }

    pub fn set_field_rows(&mut self, rows: &[[f64; CHANNELS]]) {
        for (i, r) in rows.iter().enumerate() {
            self.velocity[i] = [r[0], r[1], r[2]];
            self.pressure[i] = r[3];
        }
    }

    /// Flattened node fields, row-major `n × 4`.
    pub fn field_matrix(&self) -> Vec<f64> {
        self.field_rows().into_iter().flatten().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_count();
        if self.velocity.len() != n || self.pressure.len() != n || self.mask.len() != n {
            return invalid("per-node arrays disagree in length");
        }
        if self.edge_attr.len() != self.edges.len() {
            return invalid("edge attribute count differs from edge count");
        }
        if self.mask.iter().any(|&a| a > 1) {
            return invalid("mask entries must be 0 or 1");
        }
        let mut set = std::collections::HashSet::with_capacity(self.edges.len());
        for &[i, j] in &self.edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i},{j}) outside {n} nodes"));
            }
            set.insert((i, j));
        }
        if self.edges.iter().any(|&[i, j]| !set.contains(&(j, i))) {
            return invalid("edge set is not symmetric");
        }
        for a in &self.edge_attr {
            let norm = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if (norm - a[3]).abs() > 1e-12 {
                return invalid("edge attribute norm disagrees with its displacement");
            }
        }
        Ok(())
    }
}

pub(crate) fn edge_attributes(xi: &[f64; 3], xj: &[f64; 3]) -> [f64; 4] {
    let d = [xj[0] - xi[0], xj[1] - xi[1], xj[2] - xi[2]];
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    [d[0], d[1], d[2], norm]
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Per-channel z-score statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl FieldStats {
    pub fn new(mean: [f64; CHANNELS], std: [f64; CHANNELS]) -> Result<Self> {
        for (c, (&m, &s)) in mean.iter().zip(&std).enumerate() {
            if !m.is_finite() || !s.is_finite() || s <= 1e-12 * (1.0 + m.abs()) {
                return invalid(format!("channel {c} has degenerate std {s}"));
            }
        }
        Ok(Self { mean, std })
    }

    /// Population statistics over every node of every mesh.
    pub fn from_meshes<'a, I: IntoIterator<Item = &'a MeshGraph>>(meshes: I) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = [0.0; CHANNELS];
        let mut rows = Vec::new();
        for m in meshes {
            for r in m.field_rows() {
                for c in 0..CHANNELS {
                    sum[c] += r[c];
                }
                rows.push(r);
                count += 1;
            }
        }
        if count == 0 {
            return invalid("no nodes to compute statistics from");
        }
        let mean = sum.map(|s| s / count as f64);
        let mut var = [0.0; CHANNELS];
        for r in &rows {
            for c in 0..CHANNELS {
                var[c] += (r[c] - mean[c]).powi(2);
            }
        }
        let std = var.map(|v| (v / count as f64).sqrt());
        Self::new(mean, std)
    }

    pub fn normalize(&self, mesh: &MeshGraph) -> MeshGraph {
        let mut out = mesh.clone();
        let rows: Vec<_> = mesh
            .field_rows()
            .into_iter()
            .map(|r| std::array::from_fn(|c| (r[c] - self.mean[c]) / self.std[c]))
            .collect();
        out.set_field_rows(&rows);
        out
    }

    pub fn denormalize(&self, mesh: &MeshGraph) -> MeshGraph {
        let mut out = mesh.clone();
        let rows: Vec<_> = mesh
            .field_rows()
            .into_iter()
            .map(|r| std::array::from_fn(|c| r[c] * self.std[c] + self.mean[c]))
            .collect();
        out.set_field_rows(&rows);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Sphere,
    Ellipsoid,
    Cylinder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub kind: GeometryKind,
    /// Radius; semi-axes `a, b, c`; or `radius, height`.
    pub shape_params: Vec<f64>,
    pub node_count: usize,
    pub knn_degree: usize,
    pub seed: u64,
}

impl GeometrySpec {
    pub fn sphere(radius: f64, node_count: usize, knn_degree: usize, seed: u64) -> Self {
        Self {
            kind: GeometryKind::Sphere,
            shape_params: vec![radius],
            node_count,
            knn_degree,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.kind {
            GeometryKind::Sphere => 1,
            GeometryKind::Ellipsoid => 3,
            GeometryKind::Cylinder => 2,
        };
        if self.shape_params.len() != expected {
            return invalid(format!(
                "{:?} takes {expected} shape parameters, got {}",
                self.kind,
                self.shape_params.len()
            ));
        }
        if self.shape_params.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return invalid("shape parameters must be strictly positive");
        }
        if self.knn_degree < 3 {
            return invalid("knn_degree must be at least 3");
        }
        if self.node_count < self.knn_degree + 1 {
            return invalid("node_count must exceed knn_degree");
        }
        Ok(())
    }
}

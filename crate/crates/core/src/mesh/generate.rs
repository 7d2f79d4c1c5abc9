use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{distance, GeometryKind, GeometrySpec, MeshGraph};
use crate::error::Result;

/// Golden-angle increment of the spherical Fibonacci lattice.
const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

/// Quasi-uniform surface nodes joined by a symmetric k-nearest-neighbour
/// graph. Fields are zeroed.
pub fn generate_mesh(spec: &GeometrySpec) -> Result<MeshGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.node_count;
    let offset = rng.random::<f64>() * 2.0 * PI;
    let positions: Vec<[f64; 3]> = match spec.kind {
        GeometryKind::Sphere => {
            let r = spec.shape_params[0];
            let rot = random_rotation(&mut rng);
            fibonacci_sphere(n, offset)
                .into_iter()
                .map(|p| rotate(&rot, p).map(|c| c * r))
                .collect()
        }
        GeometryKind::Ellipsoid => {
            let (a, b, c) = (spec.shape_params[0], spec.shape_params[1], spec.shape_params[2]);
            fibonacci_sphere(n, offset)
                .into_iter()
                .map(|p| [a * p[0], b * p[1], c * p[2]])
                .collect()
        }
        GeometryKind::Cylinder => {
            let (r, h) = (spec.shape_params[0], spec.shape_params[1]);
            (0..n)
                .map(|i| {
                    let z = h * ((i as f64 + 0.5) / n as f64 - 0.5);
                    let theta = i as f64 * GOLDEN_ANGLE + offset;
                    [r * theta.cos(), r * theta.sin(), z]
                })
                .collect()
        }
    };
    let edges = knn_edges(&positions, spec.knn_degree);
    MeshGraph::from_positions(positions, edges)
}

fn fibonacci_sphere(n: usize, offset: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let theta = i as f64 * GOLDEN_ANGLE + offset;
            let p = [rho * theta.cos(), rho * theta.sin(), z];
            let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            p.map(|c| c / norm)
        })
        .collect()
}

/// Uniformly random rotation matrix from a unit quaternion.
fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
        b * (2.0 * PI * u3).cos(),
    );
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rotate(m: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    let q: [f64; 3] = std::array::from_fn(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2]);
    // Re-project onto the unit sphere so that rounding in the rotation does
    // not leak into node radii.
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
    q.map(|c| c / norm)
}

fn knn_edges(positions: &[[f64; 3]], k: usize) -> Vec<[usize; 2]> {
    let n = positions.len();
    let mut set = BTreeSet::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (distance(&positions[i], &positions[j]), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in others.iter().take(k) {
            set.insert([i, j]);
            set.insert([j, i]);
        }
    }
    // Join components through their nearest cross pair until connected.
    loop {
        let edges: Vec<[usize; 2]> = set.iter().copied().collect();
        let comp = component_of(n, &edges, 0);
        if comp.iter().all(|&c| c) {
            return edges;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| comp[i]) {
            for j in (0..n).filter(|&j| !comp[j]) {
                let d = distance(&positions[i], &positions[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("a disconnected graph has a cross pair");
        set.insert([i, j]);
        set.insert([j, i]);
    }
}

fn component_of(n: usize, edges: &[[usize; 2]], start: usize) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n];
    for &[i, j] in edges {
        adj[i].push(j);
    }
    let mut seen = vec![false; n];
    if n == 0 {
        return seen;
    }
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    seen
}

/// Breadth-first reachability of every node from node 0.
pub fn is_connected(mesh: &MeshGraph) -> bool {
    component_of(mesh.node_count(), &mesh.edges, 0).iter().all(|&s| s)
}

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::MeshGraph;

pub const DEFAULT_NOISE_SCALE: f64 = 0.05;

/// Spatial wavenumber of the base vortex field.
const WAVENUMBER: f64 = PI;

/// Superposition of two Taylor–Green vortices in the xy and yz planes with
/// time entering as a phase. Returns `(velocity, pressure)`.
///
/// Both components are divergence free and every velocity term carries a
/// sine factor, so the field vanishes at the origin for `t = 0`.
pub fn analytic_field(x: &[f64; 3], t: f64) -> ([f64; 3], f64) {
    let k = WAVENUMBER;
    let (a, b, c) = (k * x[0] + t, k * x[1], k * x[2]);
    // xy-plane vortex, phase along x
    let u1 = [a.sin() * b.cos() * c.cos(), -a.cos() * b.sin() * c.cos(), 0.0];
    let p1 = ((2.0 * a).cos() + (2.0 * b).cos()) * ((2.0 * c).cos() + 2.0) / 16.0;
    // yz-plane vortex, phase along y
    let (a2, b2, c2) = (k * x[1] + t, k * x[2], k * x[0]);
    let u2 = [0.0, a2.sin() * b2.cos() * c2.cos(), -a2.cos() * b2.sin() * c2.cos()];
    let p2 = ((2.0 * a2).cos() + (2.0 * b2).cos()) * ((2.0 * c2).cos() + 2.0) / 16.0;
    ([u1[0] + u2[0], u1[1] + u2[1], u1[2] + u2[2]], p1 + p2)
}

/// Populates fields with `u = f(x, t) + h(x) ε`, `h(x) = 1 + |x|`,
/// `ε ~ N(0, noise_scale²)` per velocity component. Pressure is noise free.
pub fn synthesize_field(mesh: &MeshGraph, t: f64, seed: u64, noise_scale: f64) -> MeshGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = mesh.clone();
    for (i, x) in mesh.positions.iter().enumerate() {
        let (mut u, p) = analytic_field(x, t);
        if noise_scale > 0.0 {
            let h = 1.0 + (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            for c in &mut u {
                let eps: f64 = StandardNormal.sample(&mut rng);
                *c += noise_scale * h * eps;
            }
        }
        out.velocity[i] = u;
        out.pressure[i] = p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_node(x: [f64; 3]) -> MeshGraph {
        MeshGraph::from_positions(vec![x], vec![]).unwrap()
    }

    #[test]
    fn identical_positions_give_identical_fields() {
        let m = MeshGraph::from_positions(vec![[0.3, -0.2, 0.9], [0.3, -0.2, 0.9]], vec![]).unwrap();
        let f = synthesize_field(&m, 1.7, 5, 0.0);
        assert_eq!(f.velocity[0], f.velocity[1]);
        assert_eq!(f.pressure[0], f.pressure[1]);
    }

    #[test]
    fn origin_is_stagnant_at_time_zero() {
        let f = synthesize_field(&single_node([0.0; 3]), 0.0, 0, 0.0);
        assert_eq!(f.velocity[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn base_field_is_divergence_free() {
        let h = 1e-5;
        for x in [[0.1, 0.4, -0.3], [0.9, -0.7, 0.2]] {
            let mut div = 0.0;
            for d in 0..3 {
                let (mut xp, mut xm) = (x, x);
                xp[d] += h;
                xm[d] -= h;
                div += (analytic_field(&xp, 0.8).0[d] - analytic_field(&xm, 0.8).0[d]) / (2.0 * h);
            }
            assert!(div.abs() < 1e-8, "divergence {div}");
        }
    }

    #[test]
    fn noise_std_matches_scale_times_envelope() {
        let x = [0.6, 0.0, 0.8]; // |x| = 1, h = 2
        let node = single_node(x);
        let base = synthesize_field(&node, 0.4, 0, 0.0).velocity[0][0];
        let samples: Vec<f64> = (0..10_000u64)
            .map(|s| synthesize_field(&node, 0.4, s, 0.1).velocity[0][0] - base)
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let expected = 0.1 * 2.0;
        assert!((var.sqrt() - expected).abs() / expected < 0.05, "std {}", var.sqrt());
    }
}

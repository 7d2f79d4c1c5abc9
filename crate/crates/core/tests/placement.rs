use proptest::prelude::*;
use sparseflow::autodiff::{cosine_lr, Tape, Tensor};
use sparseflow::error::Result;
use sparseflow::mesh::{generate_mesh, sensor_count, synthesize_field, GeometrySpec, MeshGraph, SensorMask, CHANNELS};
use sparseflow::placement::*;
use sparseflow::subset::LogProbMode;

struct Perfect(MeshGraph);

impl Reconstructor for Perfect {
    fn reconstruct(&self, _masked: &MeshGraph) -> Result<Tensor> {
        Tensor::matrix(self.0.node_count(), CHANNELS, self.0.field_matrix())
    }
}

struct Constant(f64);

impl Reconstructor for Constant {
    fn reconstruct(&self, masked: &MeshGraph) -> Result<Tensor> {
        Ok(Tensor::filled(&[masked.node_count(), CHANNELS], self.0))
    }
}

/// Six nodes on a line carrying a quadratic profile.
fn line6() -> MeshGraph {
    let edges = (0..5).flat_map(|i| [[i, i + 1], [i + 1, i]]).collect();
    let mut m = MeshGraph::from_positions((0..6).map(|i| [i as f64, 0.0, 0.0]).collect(), edges).unwrap();
    for i in 0..6 {
        let x = i as f64;
        m.velocity[i] = [x * x / 10.0, -x / 5.0, 0.5];
        m.pressure[i] = (x - 2.0).powi(2) / 4.0;
    }
    m
}

fn sphere_snapshots(n: usize, count: usize, seed: u64) -> Vec<MeshGraph> {
    let mesh = generate_mesh(&GeometrySpec::sphere(1.0, n, 4, seed)).unwrap();
    (0..count).map(|k| synthesize_field(&mesh, 0.37 * k as f64, seed + k as u64, 0.05)).collect()
}

fn small_policy(init_density: f64, seed: u64) -> PolicyConfig {
    PolicyConfig {
        latent_dim: 16,
        num_layers: 2,
        mlp_depth: 2,
        init_density,
        seed,
    }
}

#[test]
fn perfect_reconstructor_earns_zero() {
    let mesh = line6();
    let mask = SensorMask::from_indices(6, &[1, 4]).unwrap();
    assert_eq!(reward(&mesh, &mask, &Perfect(mesh.clone()), 0).unwrap(), 0.0);
}

#[test]
fn constant_predictor_reward_is_hand_mse() {
    let mesh = line6();
    let mask = SensorMask::from_indices(6, &[0, 2, 3, 5]).unwrap();
    // unsensed nodes 1 and 4, predictions all 0.5
    let rows = [[0.1, -0.2, 0.5, 0.25], [1.6, -0.8, 0.5, 1.0]];
    let mse = rows.iter().flatten().map(|v: &f64| (v - 0.5).powi(2)).sum::<f64>() / 8.0;
    let r = reward(&mesh, &mask, &Constant(0.5), 0).unwrap();
    assert!((r + mse).abs() < 1e-14, "{r} vs {}", -mse);
}

#[test]
fn all_sensed_mask_has_no_reward() {
    let mesh = line6();
    assert!(reward(&mesh, &SensorMask::ones(6), &MeanReconstructor, 0).is_err());
}

#[test]
fn sensing_the_worst_node_never_hurts_knn() {
    let mesh = line6();
    let knn = KnnReconstructor(2);
    let truth = mesh.field_rows();
    for bits in 1u32..(1 << 6) {
        let mask = SensorMask::new((0..6).map(|i| bits >> i & 1 == 1).collect());
        if mask.count() >= 5 {
            continue;
        }
        let before = reward(&mesh, &mask, &knn, 0).unwrap();
        let pred = knn.reconstruct(&sparseflow::mesh::apply_mask(&mesh, &mask, 0).unwrap()).unwrap();
        let worst = (0..6)
            .filter(|&i| !mask.get(i))
            .map(|i| (i, (0..CHANNELS).map(|c| (pred.get(i, c) - truth[i][c]).powi(2)).sum::<f64>()))
            .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
            .0;
        let mut more = mask.clone();
        more.set(worst, true);
        let after = reward(&mesh, &more, &knn, 0).unwrap();
        assert!(after >= before - 1e-15, "mask {bits:06b}: {before} -> {after}");
    }
}

fn desk_ppo(density: f64, seed: u64) -> PpoConfig {
    PpoConfig {
        density,
        lambda: 0.05,
        batch_size: 8,
        stage1_iters: 2,
        stage2_iters: 2,
        lr_start: 1e-3,
        lr_end: 1e-4,
        seed,
        ..PpoConfig::default()
    }
}

#[test]
fn recomputed_log_probs_match_collection() {
    let graphs = sphere_snapshots(20, 3, 1);
    let agent = PpoAgent::new(small_policy(0.2, 1)).unwrap();
    let env = ReconReward(&KnnReconstructor(3));
    let ids = [0, 1, 2, 1];
    for mode in [LogProbMode::Saddlepoint, LogProbMode::ExactDp] {
        let cfg = PpoConfig {
            log_prob_mode: mode,
            ..desk_ppo(0.2, 1)
        };
        for batch in [
            agent.collect_penalized(&graphs, &ids, &env, &cfg, 7).unwrap(),
            agent.collect_constrained(&graphs, &ids, &env, &cfg, 7).unwrap(),
        ] {
            for ro in &batch.rollouts {
                let lp = agent.policy.log_prob(&graphs[ro.graph], &ro.mask, ro.law).unwrap();
                assert!((lp - ro.old_log_prob).abs() < 1e-10, "{:?}", batch.stage);
            }
        }
    }
}

#[test]
fn constrained_rollouts_have_exactly_m_sensors() {
    let graphs = sphere_snapshots(30, 2, 2);
    let agent = PpoAgent::new(small_policy(0.4, 2)).unwrap();
    let cfg = desk_ppo(0.1, 2);
    let m = sensor_count(30, 0.1).unwrap();
    let batch = agent
        .collect_constrained(&graphs, &[0, 1, 0, 1, 1, 0], &ReconReward(&MeanReconstructor), &cfg, 3)
        .unwrap();
    assert!(batch.rollouts.iter().all(|r| r.mask.count() == m && r.violation == 0.0));
    assert!(batch.rollouts.iter().all(|r| matches!(r.law, MaskLaw::Constrained { m: mm, .. } if mm == m)));
    assert_eq!(agent.policy.place(&graphs[0], m, 9).unwrap().count(), m);
}

#[test]
fn unit_ratio_surrogate_gradient_is_the_policy_gradient() {
    let graphs = sphere_snapshots(16, 2, 3);
    let mut agent = PpoAgent::new(small_policy(0.3, 3)).unwrap();
    let cfg = desk_ppo(0.25, 3);
    let batch = agent
        .collect_penalized(&graphs, &[0, 1, 1, 0, 0], &ReconReward(&KnnReconstructor(2)), &cfg, 4)
        .unwrap();
    agent.policy.params.zero_grads();
    let (surrogate, clip_fraction) = agent.accumulate_policy_grads(&graphs, &batch, 0.2).unwrap();
    assert_eq!(clip_fraction, 0.0);
    let mean_adv = batch.rollouts.iter().map(|r| r.advantage).sum::<f64>() / batch.len() as f64;
    assert!((surrogate - mean_adv).abs() < 1e-12);
    let ppo: Vec<f64> = agent.policy.params.iter().flat_map(|p| p.grad.data().to_vec()).collect();

    // vanilla estimator: -(1/B) Σ A ∇log π
    let mut vanilla = agent.policy.clone();
    vanilla.params.zero_grads();
    for ro in &batch.rollouts {
        let mut tape = Tape::new();
        let z = vanilla.logits(&mut tape, &vanilla.params, &graphs[ro.graph]).unwrap();
        let lp = log_prob_var(&mut tape, z, &ro.mask, ro.law).unwrap();
        let loss = tape.scale(lp, -ro.advantage / batch.len() as f64).unwrap();
        tape.backward(loss, &mut vanilla.params).unwrap();
    }
    let reference: Vec<f64> = vanilla.params.iter().flat_map(|p| p.grad.data().to_vec()).collect();
    let scale = reference.iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(scale > 0.0);
    for (a, b) in ppo.iter().zip(&reference) {
        assert!((a - b).abs() <= 1e-12 * scale);
    }
}

#[test]
fn value_head_fits_a_constant_reward() {
    let graphs = sphere_snapshots(12, 3, 4);
    let mut agent = PpoAgent::new(small_policy(0.3, 4)).unwrap();
    let c = -0.37;
    let env = |_: &MeshGraph, _: &SensorMask, _: u64| -> Result<f64> { Ok(c) };
    let cfg = PpoConfig {
        lr_start: 3e-3,
        ..desk_ppo(0.25, 4)
    };
    let batch = agent.collect_constrained(&graphs, &[0, 1, 2], &env, &cfg, 5).unwrap();
    assert!(batch.rollouts.iter().all(|r| r.reward == c));
    for _ in 0..60 {
        agent.ppo_update(&graphs, &batch, &cfg, cfg.lr_start).unwrap();
    }
    let mut loss = 0.0;
    for g in 0..3 {
        loss += (agent.value.value(&graphs[g]).unwrap() - c).powi(2) / 3.0;
    }
    assert!(loss < 1e-4, "value loss {loss}");
}

proptest! {
    #[test]
    fn surrogate_never_exceeds_clip_bound(r in 0.0f64..5.0, a in -10.0f64..10.0, eps in 0.01f64..0.5) {
        let s = clipped_surrogate(r, a, eps);
        prop_assert!(s.abs() <= r.max(1.0 + eps) * a.abs() + 1e-12);
        prop_assert!(s <= r * a + 1e-12);
    }
}

fn mask_prob(q: &[f64], mask: &SensorMask) -> f64 {
    q.iter().zip(mask.bits()).map(|(&p, &on)| if on { p } else { 1.0 - p }).product()
}

#[test]
fn penalized_stage_climbs_toward_the_rewarded_mask() {
    let graphs = vec![line6()];
    let best = SensorMask::from_indices(6, &[1, 4]).unwrap();
    let target = best.clone();
    let env = move |_: &MeshGraph, a: &SensorMask, _: u64| -> Result<f64> { Ok(if *a == target { 1.0 } else { 0.0 }) };
    let cfg = PpoConfig {
        density: 1.0 / 3.0,
        lambda: 0.0,
        degenerate_reward: 0.0,
        batch_size: 32,
        stage1_iters: 64,
        stage2_iters: 0,
        lr_start: 3e-4,
        lr_end: 3e-5,
        seed: 5,
        ..PpoConfig::default()
    };
    let mut agent = PpoAgent::new(small_policy(1.0 / 3.0, 5)).unwrap();
    let mut trace = vec![mask_prob(agent.policy.probs(&graphs[0]).unwrap().as_slice(), &best)];
    for it in 0..cfg.stage1_iters {
        let lr = cosine_lr(cfg.lr_start, cfg.lr_end, it, cfg.stage1_iters);
        let one = PpoConfig {
            stage1_iters: 1,
            lr_start: lr,
            lr_end: lr,
            seed: cfg.seed + it as u64,
            ..cfg.clone()
        };
        agent.train_two_step(&graphs, &env, &one, |_| {}).unwrap();
        trace.push(mask_prob(agent.policy.probs(&graphs[0]).unwrap().as_slice(), &best));
    }
    let windows: Vec<f64> = trace[1..].chunks(8).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    // strictly rising until the climb saturates, then staying saturated
    for w in windows.windows(2) {
        assert!(w[1] > w[0] || w[0] > 0.99 && w[1] > 0.99, "{windows:?}");
    }
    assert!(trace[0] < 0.03 && *windows.last().unwrap() > 0.9, "{windows:?}");
}

fn violation_run(seed: u64, iters: usize) -> Vec<IterationLog> {
    let graphs = sphere_snapshots(20, 6, 6);
    let mut agent = PpoAgent::new(small_policy(0.5, seed)).unwrap();
    let cfg = PpoConfig {
        density: 0.1,
        lambda: 0.05,
        batch_size: 16,
        stage1_iters: iters,
        stage2_iters: 0,
        lr_start: 3e-4,
        lr_end: 3e-5,
        seed,
        ..PpoConfig::default()
    };
    agent.train_two_step(&graphs, &ReconReward(&KnnReconstructor(3)), &cfg, |_| {}).unwrap()
}

#[test]
fn penalized_stage_reduces_constraint_violation() {
    let log = violation_run(7, 200);
    let mean = |rows: &[IterationLog]| rows.iter().map(|r| r.mean_violation).sum::<f64>() / rows.len() as f64;
    let windows: Vec<f64> = log.chunks(log.len() / 4).map(mean).collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
    assert!(windows[3] < 0.5 * windows[0], "{windows:?}");
}

#[test]
fn training_is_deterministic() {
    let (a, b) = (violation_run(8, 12), violation_run(8, 12));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.mean_reward.to_bits(), y.mean_reward.to_bits());
        assert_eq!(x.value_loss.to_bits(), y.value_loss.to_bits());
    }
}

mod common;

use common::{miniature, rel_err};
use mpi_lgd::engine::{Ablation, LossKind};
use mpi_lgd::training::{clip_global_norm, crop_loss, train, unrolled_backprop, Checkpoint, LogRecord, TrainConfig};

fn fd_check(seed: u64, ablation: Ablation, loss: LossKind) -> f64 {
    let (tuple, weights) = miniature(seed);
    assert!(weights.param_count() <= 500);
    let (value, grads) = unrolled_backprop(&tuple, &weights, ablation, loss).unwrap();
    assert!((value - crop_loss(&tuple, &weights, ablation, loss).unwrap()).abs() < 1e-12);
    let params = weights.flatten();
    let analytic = grads.flatten();
    let mut probe = weights.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let h = 1e-5;
        let mut p = params.clone();
        p[i] += h;
        probe.load_flat(&p).unwrap();
        let up = crop_loss(&tuple, &probe, ablation, loss).unwrap();
        p[i] -= 2.0 * h;
        probe.load_flat(&p).unwrap();
        let down = crop_loss(&tuple, &probe, ablation, loss).unwrap();
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(analytic[i], fd));
    }
    worst
}

#[test]
fn unrolled_gradients_match_finite_differences() {
    for seed in [1, 2] {
        let worst = fd_check(seed, Ablation::FULL, LossKind::L2);
        assert!(worst < 1e-3, "seed {seed}: {worst}");
    }
}

#[test]
fn unrolled_gradients_with_l1_and_ablation() {
    let worst = fd_check(3, Ablation::parse("R-A").unwrap(), LossKind::L1);
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn gradients_of_unused_channels_vanish() {
    // With every component ablated the component inputs of the update net
    // never change its output, so their weight columns get no gradient.
    let (tuple, weights) = miniature(4);
    let (_, grads) = unrolled_backprop(&tuple, &weights, Ablation::NONE, LossKind::L1).unwrap();
    let first = &grads.iterations[1].encoder[0];
    let e = weights.extra_channels;
    // rendered RGB, A and T columns
    for col in (4 + e + 3)..(4 + e + 10) {
        for row in 0..first.rows {
            assert_eq!(first.matrix[row * first.cols + col], 0.0);
        }
    }
}

#[test]
fn clipping_preserves_direction() {
    let g: Vec<f64> = (0..50).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.9).collect();
    let mut c = g.clone();
    let (norm, clipped) = clip_global_norm(&mut c, 8.0);
    assert!(clipped);
    let dot: f64 = g.iter().zip(&c).map(|(a, b)| a * b).sum();
    let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((dot / (norm * nc) - 1.0).abs() < 1e-12);
    assert!((nc - 8.0).abs() < 1e-12);
}

fn tiny_run(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 2,
        learning_rate: 0.01,
        scene_seeds: vec![5],
        checkpoint_every: 2,
        ..common::miniature_config()
    }
}

#[test]
fn training_is_reproducible_and_logs_each_step() {
    let config = tiny_run(4);
    let dir = tempfile::tempdir().unwrap();
    let mut log = Vec::new();
    let a = train(&config, Some(&mut log), Some(dir.path())).unwrap();
    let b = train(&config, None, None).unwrap();
    assert_eq!(a.weights.flatten(), b.weights.flatten());
    let lines: Vec<LogRecord> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, a.log);
    assert_eq!(lines.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let ck = Checkpoint::load(&dir.path().join("checkpoint_000004.json")).unwrap();
    assert_eq!(ck.weights.flatten(), a.weights.flatten());
    assert_eq!(ck.optimizer.step, 4);
    assert!(dir.path().join("checkpoint_000002.json").exists());
}

#[test]
fn overfitting_one_tuple_lowers_the_loss() {
    use mpi_lgd::training::Adam;
    let (tuple, mut weights) = miniature(6);
    let mut params = weights.flatten();
    let mut adam = Adam::new(params.len(), 0.02, 0.9, 0.999, 1e-8);
    let start = crop_loss(&tuple, &weights, Ablation::FULL, LossKind::L1).unwrap();
    for _ in 0..150 {
        let (_, mut g) = unrolled_backprop(&tuple, &weights, Ablation::FULL, LossKind::L1)
            .map(|(l, g)| (l, g.flatten()))
            .unwrap();
        clip_global_norm(&mut g, 8.0);
        adam.update(&mut params, &g);
        weights.load_flat(&params).unwrap();
    }
    let end = crop_loss(&tuple, &weights, Ablation::FULL, LossKind::L1).unwrap();
    assert!(end < start / 3.0, "{start} -> {end}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = TrainConfig::default();
    c.iterations = 0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.crop = 1000;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::default();
    c.scene_seeds.clear();
    assert!(c.validate().is_err());
}


//! Finite-difference checks of every analytic gradient, shared by the test
//! suite and the `gradcheck` command.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::compositor::{composite, WarpedVolume};
use crate::engine::{Ablation, LossKind};
use crate::error::Result;
use crate::geometry::{Camera, View};
use crate::gradients::{finite_diff_gradient, l2_loss, l2_loss_gradient, MpiGradient};
use crate::image::Image;
use crate::mpi::{Mpi, MpiPlane};
use crate::network::{NetworkShape, UpdateNetwork};
use crate::scene::{generate_scene, render_views, RigSpec, SceneSpec};
use crate::training::{crop_loss, sample_tuple, unrolled_backprop, TrainConfig, TrainingTuple};

pub const REFERENCE_TOLERANCE: f64 = 1e-4;
pub const WARPED_TOLERANCE: f64 = 1e-3;
pub const UNROLLED_TOLERANCE: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub instances: usize,
    pub parameters: usize,
    pub worst_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: &str, instances: usize, parameters: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            instances,
            parameters,
            worst_rel_err: worst,
            tolerance,
            passed: worst < tolerance,
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn worst_of(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

fn flat(g: &MpiGradient) -> Vec<f64> {
    g.planes.iter().flat_map(|p| p.data().iter().copied()).collect()
}

/// Random premultiplied plane with alpha in `[0.05, 0.95]`.
pub fn random_plane(w: usize, h: usize, rng: &mut impl Rng) -> Image {
    let mut img = Image::zeros(w, h, 4);
    for px in img.data_mut().chunks_exact_mut(4) {
        let a = rng.gen_range(0.05..0.95);
        for c in &mut px[..3] {
            *c = a * rng.gen_range(0.0..1.0);
        }
        px[3] = a;
    }
    img
}

/// Camera of the checks: focal 8, square `size` image.
pub fn check_camera(size: usize, center: Vector3<f64>) -> Camera {
    Camera::simple(8.0, size, size, center).expect("valid camera")
}

/// Compositing gradients against differences of `sum(w * O)` for random
/// volumes (D=4, 8x8).
pub fn compositing(seed: u64, instances: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for _ in 0..instances {
        let planes: Vec<Image> = (0..4).map(|_| random_plane(8, 8, &mut rng)).collect();
        let weights = Image::from_fn(8, 8, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let objective = |ps: &[Image]| -> f64 {
            let refs: Vec<&Image> = ps.iter().collect();
            composite(&refs).color.data().iter().zip(weights.data()).map(|(o, w)| o * w).sum()
        };
        let vol = WarpedVolume::new(planes.clone()).expect("volume");
        let res = composite(&vol.refs());
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let h = 1e-4;
        for d in 0..planes.len() {
            let t = &res.transmittance[d];
            let a = &res.accumulated[d];
            for i in 0..planes[d].data().len() {
                let (p, c) = (i / 4, i % 4);
                let w = &weights.data()[p * 3..p * 3 + 3];
                analytic.push(if c < 3 {
                    w[c] * t.data()[p]
                } else {
                    -(0..3).map(|k| w[k] * a.data()[p * 3 + k]).sum::<f64>() * t.data()[p]
                });
                let mut probe = planes.clone();
                probe[d].data_mut()[i] += h;
                let up = objective(&probe);
                probe[d].data_mut()[i] -= 2.0 * h;
                let down = objective(&probe);
                numeric.push((up - down) / (2.0 * h));
            }
        }
        params += analytic.len();
        worst = worst.max(worst_of(&analytic, &numeric));
    }
    CheckResult::new("compositing gradients", instances, params, worst, REFERENCE_TOLERANCE)
}

/// Random D=4, 8x8 MPI and two views. With `warped` the views sit on a
/// horizontal baseline chosen so every plane shifts by whole pixels, where
/// the inverse warp equals the exact adjoint; otherwise both views are at
/// the reference camera.
pub fn random_instance(rng: &mut impl Rng, warped: bool) -> (Mpi, Vec<View>) {
    let reference = check_camera(8, Vector3::zeros());
    let disparities = [0.125, 0.25, 0.375, 0.5];
    let planes = disparities
        .iter()
        .map(|&disparity| MpiPlane {
            disparity,
            rgba: random_plane(8, 8, rng),
        })
        .collect();
    let mpi = Mpi::new(reference.clone(), planes).expect("valid MPI");
    let views = [-1.0, 1.0]
        .iter()
        .map(|&s| {
            let cam = if warped {
                check_camera(8, Vector3::new(s, 0.0, 0.0))
            } else {
                reference.clone()
            };
            let img = Image::from_fn(8, 8, 3, |_, _, _| rng.gen_range(0.0..1.0));
            View::new(cam, img).expect("view")
        })
        .collect();
    (mpi, views)
}

/// Assembled L2 gradient against differences of the loss itself.
pub fn l2_gradient(seed: u64, instances: usize, warped: bool) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for _ in 0..instances {
        let (mpi, views) = random_instance(&mut rng, warped);
        let analytic = flat(&l2_loss_gradient(&mpi, &views)?);
        let numeric = flat(&finite_diff_gradient(|m| l2_loss(m, &views).expect("loss"), &mpi, 1e-4));
        params += analytic.len();
        worst = worst.max(worst_of(&analytic, &numeric));
    }
    let (name, tol) = if warped {
        ("L2 gradient, warped views", WARPED_TOLERANCE)
    } else {
        ("L2 gradient, reference camera", REFERENCE_TOLERANCE)
    };
    Ok(CheckResult::new(name, instances, params, worst, tol))
}

/// K=2, D=3, N=2 over 8x8 images with a 6x6 target crop.
pub fn miniature_config() -> TrainConfig {
    TrainConfig {
        iterations: 2,
        planes: 3,
        near: 1.0,
        far: 10.0,
        extra_channels: 1,
        shape: NetworkShape {
            hidden: 4,
            encoder_layers: 1,
            stages: 1,
            stage_layers: 1,
            joint_layers: 0,
        },
        zero_update_heads: false,
        crop: 6,
        scene: SceneSpec {
            rig: RigSpec {
                rows: 1,
                cols: 2,
                spacing: 0.1,
                focal: 8.0,
                width: 8,
                height: 8,
            },
            ..SceneSpec::default()
        },
        ..TrainConfig::default()
    }
}

/// A miniature training tuple with random non-zero weights.
pub fn miniature(seed: u64) -> Result<(TrainingTuple, UpdateNetwork)> {
    let config = miniature_config();
    let scene = generate_scene(seed, &config.scene)?;
    let views = render_views(&scene, &config.scene.rig.cameras()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tuple = sample_tuple(&scene, &views, &config, &mut rng)?;
    let weights = UpdateNetwork::random(config.iterations, config.extra_channels, &config.shape, false, &mut rng);
    Ok((tuple, weights))
}

/// Every weight gradient of the unrolled miniature solve against central
/// differences of the crop loss.
pub fn unrolled(seed: u64, instances: usize, ablation: Ablation, loss: LossKind) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for i in 0..instances {
        let (tuple, weights) = miniature(seed.wrapping_add(i as u64))?;
        let (_, grads) = unrolled_backprop(&tuple, &weights, ablation, loss)?;
        let analytic = grads.flatten();
        let base = weights.flatten();
        let mut probe = weights.clone();
        let h = 1e-5;
        let mut numeric = Vec::with_capacity(base.len());
        for j in 0..base.len() {
            let mut p = base.clone();
            p[j] += h;
            probe.load_flat(&p)?;
            let up = crop_loss(&tuple, &probe, ablation, loss)?;
            p[j] -= 2.0 * h;
            probe.load_flat(&p)?;
            let down = crop_loss(&tuple, &probe, ablation, loss)?;
            numeric.push((up - down) / (2.0 * h));
        }
        params += base.len();
        worst = worst.max(worst_of(&analytic, &numeric));
    }
    Ok(CheckResult::new(
        &format!("unrolled backprop ({}, {loss:?})", ablation.label()),
        instances,
        params,
        worst,
        UNROLLED_TOLERANCE,
    ))
}

/// All suites for one seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>> {
    Ok(vec![
        compositing(seed, 10),
        l2_gradient(seed, 5, false)?,
        l2_gradient(seed, 5, true)?,
        unrolled(seed, 2, Ablation::FULL, LossKind::L1)?,
    ])
}

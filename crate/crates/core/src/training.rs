//! Training the per-iteration update networks on synthetic scenes.
//!
//! Each step samples tuples of input views, a target pose and a crop,
//! solves only the MPI footprint of that crop, and back-propagates the crop
//! loss through every iteration, including the re-rendering that feeds the
//! gradient components.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{self, Ablation, LossKind, Problem, SolveKind};
use crate::error::{Error, Result};
use crate::geometry::{Camera, View};
use crate::image::{Image, Rect};
use crate::lgd::{lgd_solve, SolverConfig, UpdateMode};
use crate::metrics::ssim;
use crate::compositor::render;
use crate::mpi::{jitter_disparities, make_plane_disparities, MpiGeometry};
use crate::network::{NetworkShape, UpdateNetwork};
use crate::scene::{generate_scene, render_scene_view, render_views, SceneSpec, SyntheticScene};
use crate::tiling::{footprint_for_crop, MemoryMeter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clipping threshold.
    pub clip_norm: f64,
    /// Tuples accumulated per optimizer step.
    pub batch_size: usize,
    pub steps: usize,
    /// Unrolled iterations `N` (including the initialization).
    pub iterations: usize,
    pub loss: LossKind,
    pub planes: usize,
    pub near: f64,
    pub far: f64,
    pub extra_channels: usize,
    pub shape: NetworkShape,
    /// Start every update network as the identity map.
    pub zero_update_heads: bool,
    pub ablation: Ablation,
    /// Relative disparity jitter of the planes per tuple.
    pub jitter: f64,
    /// Side of the square target crop.
    pub crop: usize,
    /// Target poses are drawn from the input camera hull inflated by these.
    pub lateral_slack: f64,
    pub depth_slack: f64,
    pub seed: u64,
    /// Seeds of the training scenes.
    pub scene_seeds: Vec<u64>,
    pub scene: SceneSpec,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.00015,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 8.0,
            batch_size: 1,
            steps: 1000,
            iterations: 3,
            loss: LossKind::L1,
            planes: 8,
            near: 1.0,
            far: 10.0,
            extra_channels: 4,
            shape: NetworkShape::default(),
            zero_update_heads: true,
            ablation: Ablation::FULL,
            jitter: 0.25,
            crop: 32,
            lateral_slack: 0.06,
            depth_slack: 0.07,
            seed: 0,
            scene_seeds: (0..16).collect(),
            scene: SceneSpec::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return bad("learning rate and clip threshold must be positive");
        }
        if self.scene_seeds.is_empty() {
            return bad("no training scenes");
        }
        if self.crop == 0 || self.crop > self.scene.rig.width || self.crop > self.scene.rig.height {
            return bad("crop must fit in the target image");
        }
        make_plane_disparities(self.near, self.far, self.planes)?;
        Ok(())
    }

    /// Solver settings matching what the networks were trained for.
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            iterations: self.iterations,
            mode: UpdateMode::Learned,
            planes: self.planes,
            near: self.near,
            far: self.far,
            extra_channels: self.extra_channels,
            ablation: self.ablation,
            ..SolverConfig::default()
        }
    }
}

/// One training example.
#[derive(Clone, Debug)]
pub struct TrainingTuple {
    pub views: Vec<View>,
    /// Planes of this tuple, possibly jittered.
    pub geometry: MpiGeometry,
    pub target: Camera,
    pub crop: Rect,
    /// Target image restricted to `crop`.
    pub ground_truth: Image,
}

/// Target pose inside the bounding box of the input centres, inflated by
/// the lateral and depth slack.
pub fn sample_target_center(cameras: &[Camera], lateral: f64, depth: f64, rng: &mut impl Rng) -> Vector3<f64> {
    let centers: Vec<Vector3<f64>> = cameras.iter().map(Camera::center).collect();
    let lo = centers.iter().fold(Vector3::repeat(f64::INFINITY), |a, c| a.inf(c));
    let hi = centers.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, c| a.sup(c));
    let pick = |a: f64, b: f64, r: &mut dyn rand::RngCore| if a < b { r.gen_range(a..=b) } else { a };
    Vector3::new(
        pick(lo.x - lateral, hi.x + lateral, rng),
        pick(lo.y - lateral, hi.y + lateral, rng),
        pick(lo.z - depth, hi.z + depth, rng),
    )
}

/// Draws a target pose, crop and plane jitter for `views` of `scene`.
pub fn sample_tuple(
    scene: &SyntheticScene,
    views: &[View],
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainingTuple> {
    let cameras: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let reference = Camera::centroid(&cameras)?;
    let base = make_plane_disparities(config.near, config.far, config.planes)?;
    let jittered = jitter_disparities(&base, rng, config.jitter)?;
    let geometry = MpiGeometry::new(reference, jittered.disparities)?;
    let center = sample_target_center(&cameras, config.lateral_slack, config.depth_slack, rng);
    let target = config.scene.rig.camera_at(center)?;
    let x0 = rng.gen_range(0..=target.width() - config.crop) as i64;
    let y0 = rng.gen_range(0..=target.height() - config.crop) as i64;
    let crop = Rect::from_size(x0, y0, config.crop, config.crop);
    let ground_truth = render_scene_view(scene, &target).crop(crop);
    Ok(TrainingTuple {
        views: views.to_vec(),
        geometry,
        target,
        crop,
        ground_truth,
    })
}

/// Crop loss of the unrolled solve and its gradient with respect to every
/// network weight.
pub fn unrolled_backprop(
    tuple: &TrainingTuple,
    weights: &UpdateNetwork,
    ablation: Ablation,
    loss: LossKind,
) -> Result<(f64, UpdateNetwork)> {
    weights.validate()?;
    let problem = Problem::new(&tuple.views, &tuple.geometry)?;
    let fp = footprint_for_crop(&tuple.target, tuple.crop, &tuple.geometry, &problem.cameras(), weights.len(), 0)?;
    let meter = MemoryMeter::new();
    let (raw, tape) = engine::forward(&problem, SolveKind::Learned(weights), ablation, &fp, &meter, true)?;
    let to_target = tuple.geometry.homographies(&tuple.target)?;
    let (value, g_raw, _) = engine::crop_loss(&raw, &to_target, tuple.crop, &tuple.ground_truth, loss);
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("crop loss {value}")));
    }
    let mut grads = weights.zeros_like();
    engine::backward(&problem, weights, ablation, &fp, &tape.expect("recorded"), g_raw, &mut grads);
    Ok((value, grads))
}

/// Crop loss alone, for finite-difference checks.
pub fn crop_loss(tuple: &TrainingTuple, weights: &UpdateNetwork, ablation: Ablation, loss: LossKind) -> Result<f64> {
    let problem = Problem::new(&tuple.views, &tuple.geometry)?;
    let fp = footprint_for_crop(&tuple.target, tuple.crop, &tuple.geometry, &problem.cameras(), weights.len(), 0)?;
    let raw = engine::solve_window(&problem, SolveKind::Learned(weights), ablation, &fp, &MemoryMeter::new())?;
    let to_target = tuple.geometry.homographies(&tuple.target)?;
    Ok(engine::crop_loss(&raw, &to_target, tuple.crop, &tuple.ground_truth, loss).0)
}

/// Scales `grads` so their global L2 norm is at most `threshold`. Returns
/// the norm before clipping and whether clipping happened.
pub fn clip_global_norm(grads: &mut [f64], threshold: f64) -> (f64, bool) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        grads.iter_mut().for_each(|g| *g *= s);
        (norm, true)
    } else {
        (norm, false)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(params: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Weights plus optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub weights: UpdateNetwork,
    pub optimizer: Adam,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        c.weights.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub struct Trained {
    pub weights: UpdateNetwork,
    pub log: Vec<LogRecord>,
}

/// Input views of each training scene, rendered once.
pub fn scene_views(config: &TrainConfig, seed: u64) -> Result<(SyntheticScene, Vec<View>)> {
    let scene = generate_scene(seed, &config.scene)?;
    let views = render_views(&scene, &config.scene.rig.cameras()?)?;
    Ok((scene, views))
}

/// Runs ADAM on the unrolled crop loss. Log lines go to `log` as JSON, one
/// per step; checkpoints go to `checkpoint_dir`.
pub fn train(config: &TrainConfig, mut log: Option<&mut dyn Write>, checkpoint_dir: Option<&Path>) -> Result<Trained> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = UpdateNetwork::random(
        config.iterations,
        config.extra_channels,
        &config.shape,
        config.zero_update_heads,
        &mut rng,
    );
    let data = config
        .scene_seeds
        .iter()
        .map(|&s| scene_views(config, s))
        .collect::<Result<Vec<_>>>()?;
    let mut params = weights.flatten();
    let mut adam = Adam::new(params.len(), config.learning_rate, config.beta1, config.beta2, config.epsilon);
    let mut records = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let mut acc = vec![0.0; params.len()];
        let mut loss = 0.0;
        for _ in 0..config.batch_size {
            let (scene, views) = &data[rng.gen_range(0..data.len())];
            let tuple = sample_tuple(scene, views, config, &mut rng)?;
            let (l, g) = unrolled_backprop(&tuple, &weights, config.ablation, config.loss)?;
            loss += l;
            for (a, b) in acc.iter_mut().zip(g.flatten()) {
                *a += b;
            }
        }
        let b = config.batch_size as f64;
        acc.iter_mut().for_each(|g| *g /= b);
        loss /= b;
        let (grad_norm, clipped) = clip_global_norm(&mut acc, config.clip_norm);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm at step {step}")));
        }
        adam.update(&mut params, &acc);
        weights.load_flat(&params)?;
        let record = LogRecord {
            step,
            loss,
            grad_norm,
            clipped,
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        records.push(record);
        if let Some(dir) = checkpoint_dir {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
                Checkpoint {
                    step,
                    weights: weights.clone(),
                    optimizer: adam.clone(),
                }
                .save(&dir.join(format!("checkpoint_{step:06}.json")))?;
            }
        }
    }
    Ok(Trained {
        weights,
        log: records,
    })
}

/// Held-out evaluation: for each scene, solve from the rig views and
/// compare renders at `targets` (camera centres) against the scene.
pub fn evaluate(
    weights: &UpdateNetwork,
    config: &TrainConfig,
    scene_seeds: &[u64],
    targets: &[Vector3<f64>],
) -> Result<Vec<f64>> {
    let solver = config.solver();
    let mut scores = Vec::new();
    for &seed in scene_seeds {
        let (scene, views) = scene_views(config, seed)?;
        let geometry = solver.geometry_for(&views)?;
        let mpi = lgd_solve(&views, &geometry, &solver, Some(weights))?;
        for t in targets {
            let cam = config.scene.rig.camera_at(*t)?;
            let rendered = render(&mpi, &cam)?;
            scores.push(ssim(&rendered, &render_scene_view(&scene, &cam))?);
        }
    }
    Ok(scores)
}

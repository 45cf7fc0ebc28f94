//! Seeded synthetic scenes of textured rectangles, rendered exactly by
//! intersecting camera rays with every rectangle.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, View};
use crate::image::Image;

/// Band-limited procedural texture over rectangle coordinates `(u, v)` in
/// `[-1, 1]^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    /// Base colour plus per-channel sinusoids `(fu, fv, phase, amplitude)`.
    Waves {
        base: [f64; 3],
        waves: Vec<[[f64; 4]; 3]>,
    },
    /// Two colours blended by a softened checkerboard.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        cells: f64,
        sharpness: f64,
    },
}

impl Texture {
    pub fn constant(color: [f64; 3]) -> Self {
        Texture::Waves {
            base: color,
            waves: Vec::new(),
        }
    }

    pub fn eval(&self, u: f64, v: f64) -> [f64; 3] {
        let mut out = [0.0; 3];
        match self {
            Texture::Waves { base, waves } => {
                for c in 0..3 {
                    out[c] = base[c]
                        + waves
                            .iter()
                            .map(|w| {
                                let [fu, fv, ph, amp] = w[c];
                                amp * (std::f64::consts::PI * (fu * u + fv * v) + ph).sin()
                            })
                            .sum::<f64>();
                }
            }
            Texture::Checker { a, b, cells, sharpness } => {
                let s = (std::f64::consts::PI * cells * u).sin() * (std::f64::consts::PI * cells * v).sin();
                let t = 0.5 + 0.5 * (sharpness * s).tanh();
                for c in 0..3 {
                    out[c] = a[c] * (1.0 - t) + b[c] * t;
                }
            }
        }
        out.map(|v| v.clamp(0.0, 1.0))
    }

    fn random(rng: &mut impl Rng) -> Self {
        let mut color = || -> [f64; 3] { [0, 1, 2].map(|_| rng.gen_range(0.15..0.85)) };
        let a = color();
        let b = color();
        if rng.gen_bool(0.3) {
            return Texture::Checker {
                a,
                b,
                cells: rng.gen_range(1.0..3.0),
                sharpness: rng.gen_range(1.0..3.0),
            };
        }
        let waves = (0..rng.gen_range(1..4))
            .map(|_| {
                [0, 1, 2].map(|_| {
                    [
                        rng.gen_range(-2.5..2.5),
                        rng.gen_range(-2.5..2.5),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                        rng.gen_range(0.0..0.06),
                    ]
                })
            })
            .collect();
        Texture::Waves { base: a, waves }
    }
}

/// A textured rectangle `center + u * half_u + v * half_v`, `u, v in [-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRect {
    pub center: [f64; 3],
    pub half_u: [f64; 3],
    pub half_v: [f64; 3],
    pub texture: Texture,
    pub opacity: f64,
    /// Width of the alpha ramp at the border, in `(u, v)` units.
    pub edge: f64,
}

impl SceneRect {
    /// Fronto-parallel rectangle at `depth` in world coordinates.
    pub fn fronto(center: Vector3<f64>, half_width: f64, half_height: f64, texture: Texture) -> Self {
        Self {
            center: center.into(),
            half_u: [half_width, 0.0, 0.0],
            half_v: [0.0, half_height, 0.0],
            texture,
            opacity: 1.0,
            edge: 0.0,
        }
    }

    /// Ray parameter and straight-alpha colour at the intersection, if any.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, [f64; 3], f64)> {
        let c = Vector3::from(self.center);
        let hu = Vector3::from(self.half_u);
        let hv = Vector3::from(self.half_v);
        let n = hu.cross(&hv);
        let denom = dir.dot(&n);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (c - origin).dot(&n) / denom;
        if t <= 0.0 {
            return None;
        }
        let rel = origin + dir * t - c;
        let u = rel.dot(&hu) / hu.norm_squared();
        let v = rel.dot(&hv) / hv.norm_squared();
        if u.abs() > 1.0 || v.abs() > 1.0 {
            return None;
        }
        let mut alpha = self.opacity;
        if self.edge > 0.0 {
            let inside = (1.0 - u.abs()).min(1.0 - v.abs());
            alpha *= smoothstep((inside / self.edge).min(1.0));
        }
        Some((t, self.texture.eval(u, v), alpha))
    }
}

fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub seed: u64,
    /// Any order; hits are depth sorted per ray.
    pub rects: Vec<SceneRect>,
    /// Colour of rays that hit nothing.
    pub background: [f64; 3],
}

/// Colour seen along one ray, compositing hits back to front.
pub fn trace(scene: &SyntheticScene, origin: &Vector3<f64>, dir: &Vector3<f64>) -> [f64; 3] {
    let mut hits: Vec<(f64, [f64; 3], f64)> = scene.rects.iter().filter_map(|r| r.hit(origin, dir)).collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = scene.background;
    for (_, color, alpha) in hits {
        for c in 0..3 {
            out[c] = color[c] * alpha + (1.0 - alpha) * out[c];
        }
    }
    out
}

/// Renders `scene` from `camera` with one ray per pixel centre.
pub fn render_scene_view(scene: &SyntheticScene, camera: &Camera) -> Image {
    let (w, h) = (camera.width(), camera.height());
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let (o, d) = camera.ray(x as f64, y as f64);
            data.extend(trace(scene, &o, &d));
        }
    }
    Image::from_vec(w, h, 3, data).expect("traced colours are finite")
}

/// Grid of identically oriented cameras in the `z = 0` plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub rows: usize,
    pub cols: usize,
    /// Distance between neighbouring cameras, metres.
    pub spacing: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            rows: 2,
            cols: 2,
            spacing: 0.1,
            focal: 40.0,
            width: 48,
            height: 48,
        }
    }
}

impl RigSpec {
    pub fn camera_at(&self, center: Vector3<f64>) -> Result<Camera> {
        Camera::simple(self.focal, self.width, self.height, center)
    }

    /// Centres the grid on the origin.
    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidParameter("empty camera grid".into()));
        }
        let mut out = Vec::new();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let x = (c as f64 - (self.cols - 1) as f64 / 2.0) * self.spacing;
                let y = (r as f64 - (self.rows - 1) as f64 / 2.0) * self.spacing;
                out.push(self.camera_at(Vector3::new(x, y, 0.0))?);
            }
        }
        Ok(out)
    }
}

/// Parameters of the random scene family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub min_rects: usize,
    pub max_rects: usize,
    pub near: f64,
    pub far: f64,
    /// Probability that a rectangle is rotated about the vertical axis.
    pub slant_probability: f64,
    /// Probability that a rectangle is semi-transparent.
    pub transparent_probability: f64,
    /// Rectangles are placed to be seen by this camera.
    pub rig: RigSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            min_rects: 2,
            max_rects: 6,
            near: 1.0,
            far: 10.0,
            slant_probability: 0.3,
            transparent_probability: 0.25,
            rig: RigSpec::default(),
        }
    }
}

/// Random scene: a textured backdrop at `far` plus 1 to 5 foreground
/// rectangles, all inside `[near, far]`.
pub fn generate_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    if !(spec.near > 0.0 && spec.near < spec.far && spec.far.is_finite()) {
        return Err(Error::InvalidDepthRange {
            near: spec.near,
            far: spec.far,
        });
    }
    if spec.min_rects < 2 || spec.max_rects < spec.min_rects {
        return Err(Error::InvalidParameter("need 2 <= min_rects <= max_rects".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = spec.rig.focal;
    let (w, h) = (spec.rig.width as f64, spec.rig.height as f64);
    // Backdrop wide enough for every rig camera.
    let far = spec.far;
    let reach = far * (w.max(h) / f) + spec.rig.spacing * (spec.rig.rows.max(spec.rig.cols) as f64 + 2.0);
    let mut rects = vec![SceneRect {
        texture: Texture::random(&mut rng),
        ..SceneRect::fronto(Vector3::new(0.0, 0.0, far), reach, reach, Texture::constant([0.5; 3]))
    }];
    let count = rng.gen_range(spec.min_rects..=spec.max_rects) - 1;
    let (d_lo, d_hi) = (1.0 / far, 1.0 / spec.near);
    for _ in 0..count {
        // Uniform in disparity, kept off the backdrop and the near bound.
        let disparity = d_lo + (d_hi - d_lo) * rng.gen_range(0.1..0.9);
        let depth = 1.0 / disparity;
        let px = rng.gen_range(0.2..0.8) * w;
        let py = rng.gen_range(0.2..0.8) * h;
        let center = Vector3::new((px - (w - 1.0) / 2.0) / f * depth, (py - (h - 1.0) / 2.0) / f * depth, depth);
        let half_w = rng.gen_range(0.12..0.3) * w / f * depth;
        let half_h = rng.gen_range(0.12..0.3) * h / f * depth;
        let mut half_u = Vector3::new(half_w, 0.0, 0.0);
        if rng.gen_bool(spec.slant_probability) {
            let angle: f64 = rng.gen_range(0.15..0.6) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let rot = Matrix3::new(angle.cos(), 0.0, angle.sin(), 0.0, 1.0, 0.0, -angle.sin(), 0.0, angle.cos());
            half_u = rot * half_u;
            // Keep the slanted extent inside the depth range.
            let z_lo = 1.0 / (d_hi * 0.98);
            let z_hi = 1.0 / (d_lo * 1.02);
            let limit = (depth - z_lo).min(z_hi - depth) / half_u.z.abs().max(1e-12);
            if limit < 1.0 {
                half_u *= limit;
            }
        }
        let opacity = if rng.gen_bool(spec.transparent_probability) {
            rng.gen_range(0.4..0.8)
        } else {
            1.0
        };
        rects.push(SceneRect {
            center: center.into(),
            half_u: half_u.into(),
            half_v: [0.0, half_h, 0.0],
            texture: Texture::random(&mut rng),
            opacity,
            edge: rng.gen_range(0.05..0.15),
        });
    }
    Ok(SyntheticScene {
        seed,
        rects,
        background: [0.0; 3],
    })
}

/// Backdrop plus two fronto-parallel rectangles at the given depths, back
/// to front. Textures are seeded.
pub fn layered_scene(seed: u64, depths: [f64; 3], rig: &RigSpec) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h, f) = (rig.width as f64, rig.height as f64, rig.focal);
    let reach = depths[0] * (w.max(h) / f) + rig.spacing * (rig.rows.max(rig.cols) as f64 + 2.0);
    let mut rects = vec![SceneRect::fronto(
        Vector3::new(0.0, 0.0, depths[0]),
        reach,
        reach,
        Texture::random(&mut rng),
    )];
    for (i, &z) in depths[1..].iter().enumerate() {
        let sign = if i == 0 { -1.0 } else { 1.0 };
        let center = Vector3::new(sign * 0.12 * w / f * z, sign * 0.08 * h / f * z, z);
        let mut r = SceneRect::fronto(center, 0.22 * w / f * z, 0.25 * h / f * z, Texture::random(&mut rng));
        r.edge = 0.1;
        rects.push(r);
    }
    SyntheticScene {
        seed,
        rects,
        background: [0.0; 3],
    }
}

/// Renders every camera of a rig.
pub fn render_views(scene: &SyntheticScene, cameras: &[Camera]) -> Result<Vec<View>> {
    cameras
        .iter()
        .map(|c| View::new(c.clone(), render_scene_view(scene, c)))
        .collect()
}

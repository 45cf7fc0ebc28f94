//! The multiplane image model.
//!
//! Planes are ordered back-to-front (plane 0 is the farthest). Plane
//! positions are stored as disparities (inverse depth) so a far plane at
//! infinity is simply disparity zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{plane_homography_disparity, Camera, Homography};
use crate::image::Image;

/// Alpha below which unpremultiplication yields black.
pub const UNPREMULTIPLY_EPS: f64 = 1e-6;
/// Tolerance on the `0 <= c <= alpha <= 1` plane bounds.
const BOUNDS_TOL: f64 = 1e-9;

/// Reference camera and plane placement shared by every MPI iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct MpiGeometry {
    pub reference: Camera,
    /// Strictly increasing (back-to-front).
    pub disparities: Vec<f64>,
}

impl MpiGeometry {
    pub fn new(reference: Camera, disparities: Vec<f64>) -> Result<Self> {
        if disparities.is_empty() {
            return Err(Error::ZeroPlanes);
        }
        if disparities.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter(
                "disparities must be finite and non-negative".into(),
            ));
        }
        if disparities.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "plane depths must be strictly decreasing back-to-front".into(),
            ));
        }
        Ok(Self {
            reference,
            disparities,
        })
    }

    pub fn planes(&self) -> usize {
        self.disparities.len()
    }

    pub fn width(&self) -> usize {
        self.reference.width()
    }

    pub fn height(&self) -> usize {
        self.reference.height()
    }

    pub fn depths(&self) -> Vec<f64> {
        self.disparities.iter().map(|d| 1.0 / d).collect()
    }

    /// Per-plane homographies from MPI (reference) pixels to `target` pixels.
    pub fn homographies(&self, target: &Camera) -> Result<Vec<Homography>> {
        self.disparities
            .iter()
            .map(|&d| plane_homography_disparity(&self.reference, target, d))
            .collect()
    }

    pub fn with_disparities(&self, disparities: Vec<f64>) -> Result<Self> {
        MpiGeometry::new(self.reference.clone(), disparities)
    }
}

/// One RGBA plane: premultiplied colour in channels 0..3, alpha in 3.
#[derive(Clone, Debug, PartialEq)]
pub struct MpiPlane {
    pub disparity: f64,
    pub rgba: Image,
}

impl MpiPlane {
    pub fn depth(&self) -> f64 {
        1.0 / self.disparity
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mpi {
    reference: Camera,
    planes: Vec<MpiPlane>,
}

impl Mpi {
    /// Builds an MPI, checking plane order, shapes and premultiplied bounds.
    pub fn new(reference: Camera, planes: Vec<MpiPlane>) -> Result<Self> {
        let geometry = MpiGeometry::new(
            reference.clone(),
            planes.iter().map(|p| p.disparity).collect(),
        )?;
        for (i, p) in planes.iter().enumerate() {
            check_plane(&geometry, &p.rgba).map_err(|e| match e {
                Error::InvalidParameter(m) => Error::InvalidParameter(format!("plane {i}: {m}")),
                other => other,
            })?;
        }
        Ok(Self { reference, planes })
    }

    pub fn from_geometry(geometry: &MpiGeometry, rgba: Vec<Image>) -> Result<Self> {
        if rgba.len() != geometry.planes() {
            return Err(Error::PlaneCountMismatch {
                expected: geometry.planes(),
                found: rgba.len(),
            });
        }
        let planes = geometry
            .disparities
            .iter()
            .zip(rgba)
            .map(|(&disparity, rgba)| MpiPlane { disparity, rgba })
            .collect();
        Mpi::new(geometry.reference.clone(), planes)
    }

    /// Fully transparent MPI.
    pub fn transparent(geometry: &MpiGeometry) -> Self {
        let (w, h) = (geometry.width(), geometry.height());
        Self {
            reference: geometry.reference.clone(),
            planes: geometry
                .disparities
                .iter()
                .map(|&disparity| MpiPlane {
                    disparity,
                    rgba: Image::zeros(w, h, 4),
                })
                .collect(),
        }
    }

    pub fn reference(&self) -> &Camera {
        &self.reference
    }

    pub fn planes(&self) -> &[MpiPlane] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [MpiPlane] {
        &mut self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn width(&self) -> usize {
        self.reference.width()
    }

    pub fn height(&self) -> usize {
        self.reference.height()
    }

    pub fn geometry(&self) -> MpiGeometry {
        MpiGeometry {
            reference: self.reference.clone(),
            disparities: self.planes.iter().map(|p| p.disparity).collect(),
        }
    }

    pub fn rgba_images(&self) -> Vec<&Image> {
        self.planes.iter().map(|p| &p.rgba).collect()
    }
}

fn check_plane(geometry: &MpiGeometry, rgba: &Image) -> Result<()> {
    if rgba.channels() != 4 || rgba.width() != geometry.width() || rgba.height() != geometry.height()
    {
        return Err(Error::ShapeMismatch(format!(
            "plane is {}x{}x{}, expected {}x{}x4",
            rgba.width(),
            rgba.height(),
            rgba.channels(),
            geometry.width(),
            geometry.height()
        )));
    }
    for px in rgba.data().chunks_exact(4) {
        let a = px[3];
        if !(-BOUNDS_TOL..=1.0 + BOUNDS_TOL).contains(&a)
            || px[..3]
                .iter()
                .any(|c| !(-BOUNDS_TOL..=a + BOUNDS_TOL).contains(c))
        {
            return Err(Error::InvalidParameter(format!(
                "premultiplied bounds violated by pixel {px:?}"
            )));
        }
    }
    Ok(())
}

/// Solver iterate: raw (pre-sigmoid) RGBA logits plus extra channels.
#[derive(Clone, Debug, PartialEq)]
pub struct MpiState {
    pub geometry: MpiGeometry,
    /// Per plane, `4 + extra_channels` raw channels.
    pub raw: Vec<Image>,
}

impl MpiState {
    pub fn zeros(geometry: &MpiGeometry, extra_channels: usize) -> Self {
        let (w, h) = (geometry.width(), geometry.height());
        Self {
            geometry: geometry.clone(),
            raw: (0..geometry.planes())
                .map(|_| Image::zeros(w, h, 4 + extra_channels))
                .collect(),
        }
    }

    pub fn extra_channels(&self) -> usize {
        self.raw.first().map_or(0, |r| r.channels() - 4)
    }

    /// RGBA planes via [`convert_to_rgba`] of the first four raw channels.
    pub fn rgba(&self) -> Vec<Image> {
        self.raw.iter().map(convert_to_rgba).collect()
    }

    pub fn extras(&self) -> Vec<Image> {
        let e = self.extra_channels();
        self.raw.iter().map(|r| r.select_channels(4, e)).collect()
    }

    pub fn to_mpi(&self) -> Mpi {
        Mpi {
            reference: self.geometry.reference.clone(),
            planes: self
                .geometry
                .disparities
                .iter()
                .zip(self.rgba())
                .map(|(&disparity, rgba)| MpiPlane { disparity, rgba })
                .collect(),
        }
    }
}

/// Disparities linearly spaced from `1 / far` to `1 / near`, back-to-front.
pub fn make_plane_disparities(near: f64, far: f64, count: usize) -> Result<Vec<f64>> {
    if !(near > 0.0 && near < far) || near.is_nan() {
        return Err(Error::InvalidDepthRange { near, far });
    }
    if count == 0 {
        return Err(Error::ZeroPlanes);
    }
    let lo = 1.0 / far;
    let hi = 1.0 / near;
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi - lo) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i == count - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

/// Plane depths, back-to-front. An infinite far plane yields `f64::INFINITY`.
pub fn make_plane_depths(near: f64, far: f64, count: usize) -> Result<Vec<f64>> {
    Ok(make_plane_disparities(near, far, count)?
        .into_iter()
        .map(|d| 1.0 / d)
        .collect())
}

/// Result of [`jitter_disparities`].
#[derive(Clone, Debug, PartialEq)]
pub struct Jittered {
    pub disparities: Vec<f64>,
    /// Set when the magnitude or a disparity had to be clamped.
    pub clamped: bool,
}

/// Largest usable relative jitter; beyond half the spacing planes could cross.
const MAX_JITTER: f64 = 0.5 - 1e-6;

/// Perturbs each disparity by `uniform(-m, m)` times its local plane spacing.
pub fn jitter_disparities(
    disparities: &[f64],
    rng: &mut impl Rng,
    relative_magnitude: f64,
) -> Result<Jittered> {
    if !(relative_magnitude >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "jitter magnitude {relative_magnitude} must be non-negative"
        )));
    }
    let mut clamped = false;
    let m = if relative_magnitude > MAX_JITTER {
        clamped = true;
        MAX_JITTER
    } else {
        relative_magnitude
    };
    let n = disparities.len();
    if m == 0.0 || n < 2 {
        return Ok(Jittered {
            disparities: disparities.to_vec(),
            clamped,
        });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let below = (i > 0).then(|| disparities[i] - disparities[i - 1]);
        let above = (i + 1 < n).then(|| disparities[i + 1] - disparities[i]);
        let spacing = match (below, above) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => 0.0,
        };
        let mut d = disparities[i] + rng.gen_range(-m..=m) * spacing;
        if d < 0.0 {
            d = 0.0;
            clamped = true;
        }
        out.push(d);
    }
    // Half-spacing bounds rule out crossings, but a zero clamp could tie.
    for i in 1..n {
        if out[i] <= out[i - 1] {
            out[i] = out[i - 1] + f64::EPSILON.max(out[i - 1] * 1e-12);
            clamped = true;
        }
    }
    Ok(Jittered {
        disparities: out,
        clamped,
    })
}

/// Depth-domain wrapper around [`jitter_disparities`].
pub fn jitter_depths(depths: &[f64], rng: &mut impl Rng, relative_magnitude: f64) -> Result<Jittered> {
    let disparities: Vec<f64> = depths.iter().map(|d| 1.0 / d).collect();
    let j = jitter_disparities(&disparities, rng, relative_magnitude)?;
    Ok(Jittered {
        disparities: j.disparities.iter().map(|d| 1.0 / d).collect(),
        clamped: j.clamped,
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid on four raw channels, then colour premultiplied by alpha.
#[inline]
pub fn rgba_from_raw(raw: &[f64], out: &mut [f64]) {
    let a = sigmoid(raw[3]);
    for c in 0..3 {
        out[c] = sigmoid(raw[c]) * a;
    }
    out[3] = a;
}

/// Chain rule through [`rgba_from_raw`]: accumulates into `grad_raw`.
#[inline]
pub fn rgba_from_raw_backward(raw: &[f64], grad_rgba: &[f64], grad_raw: &mut [f64]) {
    let a = sigmoid(raw[3]);
    let da = a * (1.0 - a);
    let mut g_alpha = grad_rgba[3] * da;
    for c in 0..3 {
        let s = sigmoid(raw[c]);
        grad_raw[c] += grad_rgba[c] * s * (1.0 - s) * a;
        g_alpha += grad_rgba[c] * s * da;
    }
    grad_raw[3] += g_alpha;
}

/// Maps the first four channels of a raw image to premultiplied RGBA.
pub fn convert_to_rgba(raw: &Image) -> Image {
    assert!(raw.channels() >= 4, "raw image needs at least four channels");
    let mut out = Image::zeros(raw.width(), raw.height(), 4);
    for (o, r) in out
        .data_mut()
        .chunks_exact_mut(4)
        .zip(raw.data().chunks_exact(raw.channels()))
    {
        rgba_from_raw(r, o);
    }
    out
}

/// Straight-alpha copy of a premultiplied plane.
pub fn unpremultiply(rgba: &Image) -> Image {
    let mut out = rgba.clone();
    for px in out.data_mut().chunks_exact_mut(4) {
        let a = px[3];
        for c in &mut px[..3] {
            *c = if a < UNPREMULTIPLY_EPS {
                0.0
            } else {
                (*c / a).clamp(0.0, 1.0)
            };
        }
    }
    out
}

pub fn premultiply(straight: &Image) -> Image {
    let mut out = straight.clone();
    for px in out.data_mut().chunks_exact_mut(4) {
        let a = px[3];
        for c in &mut px[..3] {
            *c *= a;
        }
    }
    out
}

/// Ramp color for position `t` in `[0, 1]`: blue at 0 through green to red
/// at 1.
pub fn depth_ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let stops = [[0.1, 0.2, 0.9], [0.0, 0.8, 0.8], [0.2, 0.85, 0.2], [0.95, 0.85, 0.1], [0.9, 0.1, 0.1]];
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let mut c = [0.0; 3];
    for k in 0..3 {
        c[k] = stops[i][k] * (1.0 - f) + stops[i + 1][k] * f;
    }
    c
}

/// Replaces every plane's color by its ramp color, keeping alpha. The back
/// plane maps to 0 and the front plane to 1.
pub fn depth_visualization(mpi: &Mpi) -> Mpi {
    let n = mpi.len();
    let planes = mpi
        .planes()
        .iter()
        .enumerate()
        .map(|(d, p)| {
            let ramp = depth_ramp(if n > 1 { d as f64 / (n - 1) as f64 } else { 0.0 });
            let mut rgba = p.rgba.clone();
            for px in rgba.data_mut().chunks_exact_mut(4) {
                for c in 0..3 {
                    px[c] = ramp[c] * px[3];
                }
            }
            MpiPlane {
                disparity: p.disparity,
                rgba,
            }
        })
        .collect();
    Mpi {
        reference: mpi.reference.clone(),
        planes,
    }
}

//! Pinhole cameras, plane-induced homographies and bilinear warping.
//!
//! A homography maps reference-image pixel coordinates to target-image
//! pixel coordinates. Warps are backward: every output pixel samples the
//! source at the inverse-mapped location, and samples falling outside the
//! source are zero in every channel.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::compositor::WarpedVolume;
use crate::image::{Image, Patch, Rect};
use crate::mpi::{Mpi, MpiGeometry};

const ORTHONORMAL_TOL: f64 = 1e-9;
/// Scale-free determinant threshold below which a 3x3 map is rejected.
const DEGENERATE_DET: f64 = 1e-12;

/// Pinhole camera with world-to-camera pose `x_cam = R x_world + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    width: usize,
    height: usize,
}

/// On-disk camera layout: row-major matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraRecord {
    pub intrinsics: [f64; 9],
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

impl TryFrom<CameraRecord> for Camera {
    type Error = Error;

    fn try_from(r: CameraRecord) -> Result<Self> {
        Camera::new(
            Matrix3::from_row_slice(&r.intrinsics),
            Matrix3::from_row_slice(&r.rotation),
            Vector3::from_row_slice(&r.translation),
            r.width,
            r.height,
        )
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        let row_major = |m: &Matrix3<f64>| {
            let mut out = [0.0; 9];
            for r in 0..3 {
                for col in 0..3 {
                    out[r * 3 + col] = m[(r, col)];
                }
            }
            out
        };
        CameraRecord {
            intrinsics: row_major(&c.intrinsics),
            rotation: row_major(&c.rotation),
            translation: [c.translation.x, c.translation.y, c.translation.z],
            width: c.width,
            height: c.height,
        }
    }
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let k = &intrinsics;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidCamera(
                "intrinsics must be upper triangular".into(),
            ));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::InvalidCamera(
                "intrinsics must have positive diagonal entries".into(),
            ));
        }
        let deviation = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(deviation <= ORTHONORMAL_TOL) || rotation.determinant() <= 0.0 {
            return Err(Error::InvalidCamera(format!(
                "rotation is not a proper orthonormal matrix (deviation {deviation:e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) || !k.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidCamera("non-finite entries".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidCamera("image size must be non-zero".into()));
        }
        Ok(Self {
            intrinsics,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera with focal length `focal`, principal point at the image centre
    /// and optical centre at `center` looking down world +z.
    pub fn simple(focal: f64, width: usize, height: usize, center: Vector3<f64>) -> Result<Self> {
        let k = Matrix3::new(
            focal,
            0.0,
            (width as f64 - 1.0) / 2.0,
            0.0,
            focal,
            (height as f64 - 1.0) / 2.0,
            0.0,
            0.0,
            1.0,
        );
        Camera::new(k, Matrix3::identity(), -center, width, height)
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn image_rect(&self) -> Rect {
        Rect::from_size(0, 0, self.width, self.height)
    }

    /// Optical centre in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn with_center(&self, center: Vector3<f64>) -> Camera {
        let mut c = self.clone();
        c.translation = -(self.rotation * center);
        c
    }

    pub fn with_size(&self, width: usize, height: usize, intrinsics: Matrix3<f64>) -> Result<Camera> {
        Camera::new(intrinsics, self.rotation, self.translation, width, height)
    }

    /// Pose of `self` relative to `reference`: `x_self = R x_ref + t`.
    pub fn relative_to(&self, reference: &Camera) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotation * reference.rotation.transpose();
        let t = self.translation - r * reference.translation;
        (r, t)
    }

    /// Projects a world point; `None` when it lies behind the camera.
    pub fn project(&self, world: &Vector3<f64>) -> Option<(f64, f64)> {
        let p = self.intrinsics * (self.rotation * world + self.translation);
        (p.z > 0.0).then(|| (p.x / p.z, p.y / p.z))
    }

    /// World-space ray (origin, unit direction) through pixel `(x, y)`.
    pub fn ray(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let k_inv = self.intrinsics.try_inverse().expect("validated intrinsics");
        let dir_cam = k_inv * Vector3::new(x, y, 1.0);
        let dir = (self.rotation.transpose() * dir_cam).normalize();
        (self.center(), dir)
    }

    /// Camera at the centroid of `cameras`: mean optical centre, chordal
    /// mean rotation, intrinsics and size of the first camera.
    pub fn centroid(cameras: &[Camera]) -> Result<Camera> {
        let first = cameras.first().ok_or(Error::NoViews)?;
        let n = cameras.len() as f64;
        let center = cameras.iter().map(Camera::center).sum::<Vector3<f64>>() / n;
        let mean_r = cameras.iter().map(|c| c.rotation).sum::<Matrix3<f64>>() / n;
        let svd = mean_r.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut rotation = u * v_t;
        if rotation.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            rotation = u * v_t;
        }
        Camera::new(
            first.intrinsics,
            rotation,
            -(rotation * center),
            first.width,
            first.height,
        )
    }
}

/// A posed input or target image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

impl View {
    pub fn new(camera: Camera, image: Image) -> Result<Self> {
        if image.width() != camera.width() || image.height() != camera.height() {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{} but camera is {}x{}",
                image.width(),
                image.height(),
                camera.width(),
                camera.height()
            )));
        }
        if image.channels() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "views must be RGB, got {} channels",
                image.channels()
            )));
        }
        Ok(Self { camera, image })
    }
}

/// Nonsingular 3x3 projective map with its inverse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    forward: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let det = m.determinant();
        let scale = m.norm().powi(3);
        if !det.is_finite() || scale == 0.0 || (det / scale).abs() < DEGENERATE_DET {
            return Err(Error::DegenerateHomography(det));
        }
        let inverse = m.try_inverse().ok_or(Error::DegenerateHomography(det))?;
        Ok(Self { forward: m, inverse })
    }

    pub fn identity() -> Self {
        Self {
            forward: Matrix3::identity(),
            inverse: Matrix3::identity(),
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::new(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0)).unwrap()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.forward
    }

    pub fn inverse_matrix(&self) -> &Matrix3<f64> {
        &self.inverse
    }

    pub fn inverse(&self) -> Homography {
        Homography {
            forward: self.inverse,
            inverse: self.forward,
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Homography) -> Homography {
        Homography {
            forward: self.forward * first.forward,
            inverse: first.inverse * self.inverse,
        }
    }

    /// Matrix scaled so the bottom-right entry is one.
    pub fn normalized(&self) -> Matrix3<f64> {
        self.forward / self.forward[(2, 2)]
    }

    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        project(&self.forward, x, y)
    }

    pub fn apply_inverse(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        project(&self.inverse, x, y)
    }
}

#[inline]
pub(crate) fn project(m: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    if w <= 0.0 {
        return None;
    }
    Some((
        (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w,
        (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w,
    ))
}

/// Homography induced by the plane `n . X = 1 / inverse_distance` expressed
/// in the reference camera frame.
pub fn plane_induced_homography(
    reference: &Camera,
    target: &Camera,
    normal: &Vector3<f64>,
    inverse_distance: f64,
) -> Result<Homography> {
    let k_ref_inv = reference
        .intrinsics
        .try_inverse()
        .ok_or(Error::SingularIntrinsics)?;
    let (r, t) = target.relative_to(reference);
    let m = target.intrinsics * (r + t * normal.transpose() * inverse_distance) * k_ref_inv;
    Homography::new(m)
}

/// Homography of the fronto-parallel plane at `depth` in the reference frame.
/// An infinite depth gives the plane at infinity.
pub fn plane_homography(reference: &Camera, target: &Camera, depth: f64) -> Result<Homography> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    plane_homography_disparity(reference, target, 1.0 / depth)
}

pub fn plane_homography_disparity(
    reference: &Camera,
    target: &Camera,
    disparity: f64,
) -> Result<Homography> {
    if !(disparity >= 0.0) || !disparity.is_finite() {
        return Err(Error::NonPositiveDepth(1.0 / disparity));
    }
    plane_induced_homography(reference, target, &Vector3::z(), disparity)
}

/// The four bilinear taps `(x, y, weight)` for a sample at `(x, y)`.
#[inline]
pub fn bilinear_taps(x: f64, y: f64) -> [(i64, i64, f64); 4] {
    let fx0 = x.floor();
    let fy0 = y.floor();
    let ax = x - fx0;
    let ay = y - fy0;
    let (x0, y0) = (fx0 as i64, fy0 as i64);
    [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x0 + 1, y0, ax * (1.0 - ay)),
        (x0, y0 + 1, (1.0 - ax) * ay),
        (x0 + 1, y0 + 1, ax * ay),
    ]
}

/// Adds the bilinear sample of `src` at `(x, y)` into `out`.
#[inline]
pub fn sample_into(src: &Patch, x: f64, y: f64, out: &mut [f64]) {
    sample_window(&src.image, src.rect, x, y, out);
}

/// [`sample_into`] for an image whose pixel `(0, 0)` sits at `rect`'s origin.
#[inline]
pub fn sample_window(src: &Image, rect: Rect, x: f64, y: f64, out: &mut [f64]) {
    if !(x.is_finite() && y.is_finite()) {
        return;
    }
    let c = src.channels();
    for (tx, ty, w) in bilinear_taps(x, y) {
        if w == 0.0 || !rect.contains(tx, ty) {
            continue;
        }
        let i = src.index((tx - rect.x0) as usize, (ty - rect.y0) as usize);
        for (o, s) in out.iter_mut().zip(&src.data()[i..i + c]) {
            *o += w * s;
        }
    }
}

/// Adds `grad * w` into the taps of `(x, y)`: the adjoint of [`sample_into`].
#[inline]
pub fn scatter_from(dst: &mut Patch, x: f64, y: f64, grad: &[f64]) {
    let rect = dst.rect;
    scatter_window(&mut dst.image, rect, x, y, grad);
}

/// Adjoint of [`sample_window`].
#[inline]
pub fn scatter_window(dst: &mut Image, rect: Rect, x: f64, y: f64, grad: &[f64]) {
    if !(x.is_finite() && y.is_finite()) {
        return;
    }
    let c = dst.channels();
    for (tx, ty, w) in bilinear_taps(x, y) {
        if w == 0.0 || !rect.contains(tx, ty) {
            continue;
        }
        let i = dst.index((tx - rect.x0) as usize, (ty - rect.y0) as usize);
        for (o, g) in dst.data_mut()[i..i + c].iter_mut().zip(grad) {
            *o += w * g;
        }
    }
}

/// Resamples `src` onto `dst_rect`: output pixel `p` takes the bilinear
/// sample of `src` at `dst_to_src * p`.
pub fn resample(src: &Patch, dst_to_src: &Matrix3<f64>, dst_rect: Rect) -> Patch {
    let mut out = Patch::zeros(dst_rect, src.channels());
    let c = src.channels();
    let mut acc = vec![0.0; c];
    for y in dst_rect.y0..dst_rect.y1 {
        for x in dst_rect.x0..dst_rect.x1 {
            if let Some((sx, sy)) = project(dst_to_src, x as f64, y as f64) {
                acc.iter_mut().for_each(|v| *v = 0.0);
                sample_into(src, sx, sy, &mut acc);
                out.at_mut(x, y).unwrap().copy_from_slice(&acc);
            }
        }
    }
    out
}

/// Exact adjoint of [`resample`]: scatters `grad` (on the output grid) back
/// onto `src_rect`.
pub fn resample_adjoint(grad: &Patch, dst_to_src: &Matrix3<f64>, src_rect: Rect) -> Patch {
    let mut out = Patch::zeros(src_rect, grad.channels());
    resample_adjoint_into(grad, dst_to_src, &mut out);
    out
}

pub fn resample_adjoint_into(grad: &Patch, dst_to_src: &Matrix3<f64>, out: &mut Patch) {
    let r = grad.rect;
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let g = grad.at(x, y).unwrap();
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            if let Some((sx, sy)) = project(dst_to_src, x as f64, y as f64) {
                scatter_from(out, sx, sy, g);
            }
        }
    }
}

/// Fraction of the bilinear footprint at `dst_to_src * p` that lands inside
/// a `width x height` source image.
#[inline]
pub fn coverage(dst_to_src: &Matrix3<f64>, x: f64, y: f64, width: usize, height: usize) -> f64 {
    let Some((sx, sy)) = project(dst_to_src, x, y) else {
        return 0.0;
    };
    if !(sx.is_finite() && sy.is_finite()) {
        return 0.0;
    }
    let bounds = Rect::from_size(0, 0, width, height);
    bilinear_taps(sx, sy)
        .iter()
        .filter(|(tx, ty, _)| bounds.contains(*tx, *ty))
        .map(|(_, _, w)| w)
        .sum()
}

/// Backward-warps `src` through `h` into an `out_width x out_height` image.
pub fn warp_image(src: &Image, h: &Homography, out_width: usize, out_height: usize) -> Result<Image> {
    if !src.is_finite() {
        return Err(Error::NonFinite("warp source".into()));
    }
    let src = Patch::full(src.clone());
    let out = resample(
        &src,
        h.inverse_matrix(),
        Rect::from_size(0, 0, out_width, out_height),
    );
    Ok(out.image)
}

/// Warps every MPI plane into `target` with its plane homography.
pub fn warp_mpi_to_view(mpi: &Mpi, target: &Camera) -> Result<WarpedVolume> {
    let homographies = mpi.geometry().homographies(target)?;
    let rect = target.image_rect();
    let planes = mpi
        .planes()
        .iter()
        .zip(&homographies)
        .map(|(p, h)| {
            let src = Patch::full(p.rgba.clone());
            resample(&src, h.inverse_matrix(), rect).image
        })
        .collect();
    WarpedVolume::new(planes)
}

/// Maps per-plane images in `target`'s pixel grid back into MPI space using
/// each plane's homography (the inverse of [`warp_mpi_to_view`]).
pub fn inverse_warp_volume(
    volume: &[Image],
    target: &Camera,
    geometry: &MpiGeometry,
) -> Result<Vec<Image>> {
    if volume.len() != geometry.planes() {
        return Err(Error::PlaneCountMismatch {
            expected: geometry.planes(),
            found: volume.len(),
        });
    }
    let homographies = geometry.homographies(target)?;
    let rect = geometry.reference.image_rect();
    Ok(volume
        .iter()
        .zip(&homographies)
        .map(|(img, h)| resample(&Patch::full(img.clone()), h.matrix(), rect).image)
        .collect())
}

//! Compositing gradients, per-view gradient components and the explicit
//! L2 loss gradient.
//!
//! Gradients computed in a view's pixel grid are brought back to MPI space
//! with the inverse warp (sampling through each plane's homography) rather
//! than the exact adjoint of the forward bilinear warp. For pure image-plane
//! translations the two coincide.

use nalgebra::Matrix3;

use crate::compositor::{composite, composite_backward, Composite, WarpedVolume};
use crate::error::{Error, Result};
use crate::geometry::{coverage, project, sample_into, sample_window, scatter_window, View};
use crate::geometry::{inverse_warp_volume, warp_mpi_to_view};
use crate::image::{Image, Patch, Rect};
use crate::mpi::Mpi;

/// Channel offsets inside a gradient-component volume.
pub mod channel {
    /// Plane sweep of the input image.
    pub const INPUT: usize = 0;
    /// Plane sweep of the current rendering.
    pub const RENDERED: usize = 3;
    pub const ACCUMULATED: usize = 6;
    pub const TRANSMITTANCE: usize = 9;
    /// Fraction of the sampling footprint inside the view.
    pub const MASK: usize = 10;
    pub const COMPONENTS: usize = 10;
    pub const WITH_MASK: usize = 11;
}

/// Per-view gradient components in MPI space: for each plane an image with
/// `[input PSV, rendered PSV, A, T, mask]` (11 channels).
#[derive(Clone, Debug, PartialEq)]
pub struct GradientComponents {
    pub planes: Vec<Image>,
}

/// Gradient with respect to premultiplied colour (channels 0..3) and alpha
/// (channel 3), one image per plane.
#[derive(Clone, Debug, PartialEq)]
pub struct MpiGradient {
    pub planes: Vec<Image>,
}

impl MpiGradient {
    pub fn zeros_like(mpi: &Mpi) -> Self {
        Self {
            planes: mpi
                .planes()
                .iter()
                .map(|p| Image::zeros(p.rgba.width(), p.rgba.height(), 4))
                .collect(),
        }
    }

    pub fn color(&self, plane: usize) -> Image {
        self.planes[plane].select_channels(0, 3)
    }

    pub fn alpha(&self, plane: usize) -> Image {
        self.planes[plane].select_channels(3, 1)
    }

    pub fn max_abs(&self) -> f64 {
        self.planes
            .iter()
            .flat_map(|p| p.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.planes.iter().all(Image::is_finite)
    }

    fn add_assign(&mut self, other: &MpiGradient) {
        for (a, b) in self.planes.iter_mut().zip(&other.planes) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }
}

/// `dO / dc_d`: the net transmittance of every plane.
pub fn over_grad_color(vol: &WarpedVolume) -> Vec<Image> {
    composite(&vol.refs()).transmittance
}

/// `dO / da_d = -A_d T_d` per colour channel.
pub fn over_grad_alpha(vol: &WarpedVolume) -> Vec<Image> {
    let res = composite(&vol.refs());
    res.accumulated
        .iter()
        .zip(&res.transmittance)
        .map(|(a, t)| {
            let mut out = a.clone();
            for (px, tv) in out.data_mut().chunks_exact_mut(3).zip(t.data()) {
                for v in px {
                    *v = -*v * tv;
                }
            }
            out
        })
        .collect()
}

/// Samples the gradient components of plane `d` onto `mpi_rect`.
///
/// `rendering` is the composite of the current MPI over `window` of the
/// view; `input` is the view image (any window containing `window`).
/// `mpi_to_view` maps MPI pixels to view pixels for this plane.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_components(
    input: &Patch,
    rendering: &Composite,
    window: Rect,
    d: usize,
    mpi_to_view: &Matrix3<f64>,
    mpi_rect: Rect,
    view_size: (usize, usize),
) -> Patch {
    let mut out = Patch::zeros(mpi_rect, channel::WITH_MASK);
    let acc = &rendering.accumulated[d];
    let trans = &rendering.transmittance[d];
    for y in mpi_rect.y0..mpi_rect.y1 {
        for x in mpi_rect.x0..mpi_rect.x1 {
            let Some((sx, sy)) = project(mpi_to_view, x as f64, y as f64) else {
                continue;
            };
            let px = out.at_mut(x, y).unwrap();
            sample_into(input, sx, sy, &mut px[channel::INPUT..channel::INPUT + 3]);
            sample_window(
                &rendering.color,
                window,
                sx,
                sy,
                &mut px[channel::RENDERED..channel::RENDERED + 3],
            );
            sample_window(acc, window, sx, sy, &mut px[channel::ACCUMULATED..channel::ACCUMULATED + 3]);
            sample_window(
                trans,
                window,
                sx,
                sy,
                &mut px[channel::TRANSMITTANCE..channel::TRANSMITTANCE + 1],
            );
            px[channel::MASK] = coverage(mpi_to_view, x as f64, y as f64, view_size.0, view_size.1);
        }
    }
    out
}

/// Adjoint of [`sample_components`] for the rendering-dependent channels;
/// the gradient images live on `window`.
pub(crate) fn sample_components_backward(
    grad: &Patch,
    mpi_to_view: &Matrix3<f64>,
    window: Rect,
    grad_rendered: &mut Image,
    grad_accumulated: &mut Image,
    grad_transmittance: &mut Image,
) {
    let r = grad.rect;
    for y in r.y0..r.y1 {
        for x in r.x0..r.x1 {
            let g = grad.at(x, y).unwrap();
            if g[channel::RENDERED..channel::MASK].iter().all(|v| *v == 0.0) {
                continue;
            }
            let Some((sx, sy)) = project(mpi_to_view, x as f64, y as f64) else {
                continue;
            };
            scatter_window(grad_rendered, window, sx, sy, &g[channel::RENDERED..channel::RENDERED + 3]);
            scatter_window(
                grad_accumulated,
                window,
                sx,
                sy,
                &g[channel::ACCUMULATED..channel::ACCUMULATED + 3],
            );
            scatter_window(
                grad_transmittance,
                window,
                sx,
                sy,
                &g[channel::TRANSMITTANCE..channel::TRANSMITTANCE + 1],
            );
        }
    }
}

/// Renders `mpi` into `view` and returns the warped volume and its composite.
fn render_view(mpi: &Mpi, view: &View) -> Result<(WarpedVolume, Composite)> {
    let vol = warp_mpi_to_view(mpi, &view.camera)?;
    let res = composite(&vol.refs());
    Ok((vol, res))
}

/// Per-view gradient components `W^-1([I, I~, A, T])` plus the validity mask.
pub fn gradient_components(mpi: &Mpi, view: &View) -> Result<GradientComponents> {
    let geometry = mpi.geometry();
    let homographies = geometry.homographies(&view.camera)?;
    let (_, res) = render_view(mpi, view)?;
    let input = Patch::full(view.image.clone());
    let size = (view.camera.width(), view.camera.height());
    let window = view.camera.image_rect();
    let mpi_rect = geometry.reference.image_rect();
    let planes = homographies
        .iter()
        .enumerate()
        .map(|(d, h)| sample_components(&input, &res, window, d, h.matrix(), mpi_rect, size).image)
        .collect();
    Ok(GradientComponents { planes })
}

/// View-space gradient of `sum ||I~ - I||^2` for one view, per warped plane.
fn l2_view_gradient(vol: &WarpedVolume, res: &Composite, target: &Image) -> Vec<Image> {
    let mut residual = res.color.clone();
    for (r, t) in residual.data_mut().iter_mut().zip(target.data()) {
        *r = 2.0 * (*r - t);
    }
    composite_backward(&vol.refs(), res, Some(&residual), None, None)
}

/// Gradient of `L = sum_k ||I~_k - I_k||^2` with respect to the premultiplied
/// MPI, assembled from `I`, `I~`, `A` and `T` in each view and inverse-warped.
pub fn l2_loss_gradient(mpi: &Mpi, views: &[View]) -> Result<MpiGradient> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    let geometry = mpi.geometry();
    let mut total = MpiGradient::zeros_like(mpi);
    for view in views {
        let (vol, res) = render_view(mpi, view)?;
        let per_plane = l2_view_gradient(&vol, &res, &view.image);
        let back = inverse_warp_volume(&per_plane, &view.camera, &geometry)?;
        total.add_assign(&MpiGradient { planes: back });
    }
    Ok(total)
}

/// The scalar L2 loss matching [`l2_loss_gradient`].
pub fn l2_loss(mpi: &Mpi, views: &[View]) -> Result<f64> {
    let mut loss = 0.0;
    for view in views {
        let (_, res) = render_view(mpi, view)?;
        loss += res
            .color
            .data()
            .iter()
            .zip(view.image.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(loss)
}

/// Central finite differences of `f` over every premultiplied colour and
/// alpha entry of `mpi`.
pub fn finite_diff_gradient(f: impl Fn(&Mpi) -> f64, mpi: &Mpi, h: f64) -> MpiGradient {
    let mut grad = MpiGradient::zeros_like(mpi);
    let mut probe = mpi.clone();
    for d in 0..mpi.len() {
        for i in 0..mpi.planes()[d].rgba.data().len() {
            let orig = probe.planes()[d].rgba.data()[i];
            probe.planes_mut()[d].rgba.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.planes_mut()[d].rgba.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.planes_mut()[d].rgba.data_mut()[i] = orig;
            grad.planes[d].data_mut()[i] = (up - down) / (2.0 * h);
        }
    }
    grad
}

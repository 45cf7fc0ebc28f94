//! Back-to-front over-compositing of premultiplied RGBA planes.
//!
//! For planes `1..=D` (back to front) with colour `c_d` and alpha `a_d`:
//!
//! * net transmittance `T_d = prod_{i>d} (1 - a_i)`, so `T_D = 1`;
//! * accumulated over `A_d = sum_{i<d} c_i prod_{i<j<d} (1 - a_j)`, so `A_1 = 0`;
//! * rendered colour `O = sum_d c_d T_d`, which is `A` at a virtual plane `D + 1`.
//!
//! Since `dO / dc_d = T_d` and `dO / da_d = -A_d T_d`, the same quantities
//! serve the forward pass and the closed-form gradients.

use crate::error::{Error, Result};
use crate::geometry::warp_mpi_to_view;
use crate::geometry::Camera;
use crate::image::Image;
use crate::mpi::Mpi;

/// An MPI warped into a view: one 4-channel image per plane, back-to-front.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedVolume {
    pub planes: Vec<Image>,
}

impl WarpedVolume {
    pub fn new(planes: Vec<Image>) -> Result<Self> {
        let first = planes.first().ok_or(Error::ZeroPlanes)?;
        if planes
            .iter()
            .any(|p| p.channels() != 4 || p.width() != first.width() || p.height() != first.height())
        {
            return Err(Error::ShapeMismatch(
                "warped planes must share dimensions and have 4 channels".into(),
            ));
        }
        Ok(Self { planes })
    }

    pub fn refs(&self) -> Vec<&Image> {
        self.planes.iter().collect()
    }
}

/// Output of one compositing sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub color: Image,
    /// `T_d`, one channel per plane.
    pub transmittance: Vec<Image>,
    /// `A_d`, three channels per plane.
    pub accumulated: Vec<Image>,
}

/// Computes `O`, `T` and `A` together.
pub fn composite(planes: &[&Image]) -> Composite {
    let first = planes.first().expect("at least one plane");
    let (w, h) = (first.width(), first.height());
    let n = planes.len();
    let mut color = Image::zeros(w, h, 3);
    let mut accumulated: Vec<Image> = (0..n).map(|_| Image::zeros(w, h, 3)).collect();
    let mut transmittance: Vec<Image> = (0..n).map(|_| Image::zeros(w, h, 1)).collect();
    let pixels = w * h;
    for p in 0..pixels {
        let mut acc = [0.0f64; 3];
        for d in 0..n {
            accumulated[d].data_mut()[p * 3..p * 3 + 3].copy_from_slice(&acc);
            let px = &planes[d].data()[p * 4..p * 4 + 4];
            let keep = 1.0 - px[3];
            for c in 0..3 {
                acc[c] = px[c] + keep * acc[c];
            }
        }
        color.data_mut()[p * 3..p * 3 + 3].copy_from_slice(&acc);
        let mut t = 1.0;
        for d in (0..n).rev() {
            transmittance[d].data_mut()[p] = t;
            t *= 1.0 - planes[d].data()[p * 4 + 3];
        }
    }
    Composite {
        color,
        transmittance,
        accumulated,
    }
}

/// Reverse-mode pass through [`composite`].
///
/// Upstream gradients may be given for the colour and for any of the
/// per-plane `A_d` / `T_d` outputs; the result holds `d/dc_d` in channels
/// 0..3 and `d/da_d` in channel 3 of each plane.
pub fn composite_backward(
    planes: &[&Image],
    result: &Composite,
    grad_color: Option<&Image>,
    grad_accumulated: Option<&[Image]>,
    grad_transmittance: Option<&[Image]>,
) -> Vec<Image> {
    let first = planes[0];
    let (w, h) = (first.width(), first.height());
    let n = planes.len();
    let mut grads: Vec<Image> = (0..n).map(|_| Image::zeros(w, h, 4)).collect();
    for p in 0..w * h {
        // Accumulated-over recurrence A_{d+1} = c_d + (1 - a_d) A_d.
        let mut g_next = [0.0f64; 3];
        if let Some(g) = grad_color {
            g_next.copy_from_slice(&g.data()[p * 3..p * 3 + 3]);
        }
        for d in (0..n).rev() {
            let px = &planes[d].data()[p * 4..p * 4 + 4];
            let a_d = &result.accumulated[d].data()[p * 3..p * 3 + 3];
            let out = &mut grads[d].data_mut()[p * 4..p * 4 + 4];
            let mut g_alpha = 0.0;
            for c in 0..3 {
                out[c] += g_next[c];
                g_alpha -= g_next[c] * a_d[c];
            }
            out[3] += g_alpha;
            let keep = 1.0 - px[3];
            for c in 0..3 {
                let upstream = grad_accumulated.map_or(0.0, |g| g[d].data()[p * 3 + c]);
                g_next[c] = upstream + keep * g_next[c];
            }
        }
        // Transmittance recurrence T_{d-1} = (1 - a_d) T_d.
        if let Some(gt) = grad_transmittance {
            let mut g_prev = gt[0].data()[p];
            for d in 1..n {
                let t_d = result.transmittance[d].data()[p];
                grads[d].data_mut()[p * 4 + 3] -= t_d * g_prev;
                let keep = 1.0 - planes[d].data()[p * 4 + 3];
                g_prev = gt[d].data()[p] + keep * g_prev;
            }
        }
    }
    grads
}

/// Rendered colour of a warped volume.
pub fn over_composite(vol: &WarpedVolume) -> Image {
    composite(&vol.refs()).color
}

/// `T_d` for every plane.
pub fn net_transmittance(vol: &WarpedVolume) -> Vec<Image> {
    composite(&vol.refs()).transmittance
}

/// `A_d` for every plane.
pub fn accumulated_over(vol: &WarpedVolume) -> Vec<Image> {
    composite(&vol.refs()).accumulated
}

/// Renders `mpi` into `target`.
pub fn render(mpi: &Mpi, target: &Camera) -> Result<Image> {
    Ok(over_composite(&warp_mpi_to_view(mpi, target)?))
}

//! Windowed forward and reverse passes of the unrolled solver.
//!
//! Every pass works on the rectangles of a [`TileFootprint`]: full images
//! for untiled solves, one tile at a time for tiled solves, and the crop's
//! footprint during training. Values inside a footprint's output rectangles
//! do not depend on the window sizes.

use serde::{Deserialize, Serialize};

use crate::compositor::{composite, composite_backward, Composite};
use crate::error::{Error, Result};
use crate::geometry::{coverage, project, resample, resample_adjoint_into, sample_into, Camera, Homography, View};
use crate::gradients::{channel, sample_components, sample_components_backward};
use crate::image::{Image, Patch, Rect};
use crate::mpi::{rgba_from_raw, rgba_from_raw_backward, MpiGeometry};
use crate::network::{IterationNet, NetCache, UpdateNetwork};
use crate::tiling::{map_rect, MemoryMeter, TileFootprint};

/// Pixels evaluated per network call.
const CHUNK: usize = 4096;

/// Which gradient-component groups reach the update networks. Disabled
/// groups are fed as zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub rendered: bool,
    pub transmittance: bool,
    pub accumulated: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::FULL
    }
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        rendered: true,
        transmittance: true,
        accumulated: true,
    };
    pub const NONE: Ablation = Ablation {
        rendered: false,
        transmittance: false,
        accumulated: false,
    };

    /// Parses labels such as `RTA`, `R-A` or `---`.
    pub fn parse(label: &str) -> Result<Self> {
        let c: Vec<char> = label.chars().collect();
        let bad = || Error::InvalidParameter(format!("ablation label {label:?}, expected e.g. RTA or R--"));
        if c.len() != 3 {
            return Err(bad());
        }
        let flag = |ch: char, on: char| match ch {
            '-' => Ok(false),
            x if x.eq_ignore_ascii_case(&on) => Ok(true),
            _ => Err(bad()),
        };
        Ok(Self {
            rendered: flag(c[0], 'R')?,
            transmittance: flag(c[1], 'T')?,
            accumulated: flag(c[2], 'A')?,
        })
    }

    pub fn label(&self) -> String {
        [(self.rendered, 'R'), (self.transmittance, 'T'), (self.accumulated, 'A')]
            .iter()
            .map(|&(on, c)| if on { c } else { '-' })
            .collect()
    }

    /// Zeroes disabled groups of an 11-channel component vector.
    pub(crate) fn apply(&self, comps: &mut [f64]) {
        if !self.rendered {
            comps[channel::RENDERED..channel::RENDERED + 3].fill(0.0);
        }
        if !self.accumulated {
            comps[channel::ACCUMULATED..channel::ACCUMULATED + 3].fill(0.0);
        }
        if !self.transmittance {
            comps[channel::TRANSMITTANCE] = 0.0;
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum SolveKind<'a> {
    Learned(&'a UpdateNetwork),
    Classic { step_size: f64 },
}

/// Input views with their per-plane homographies (MPI to view).
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub views: &'a [View],
    pub geometry: &'a MpiGeometry,
    /// `homographies[k][d]`.
    pub homographies: Vec<Vec<Homography>>,
}

impl<'a> Problem<'a> {
    pub fn new(views: &'a [View], geometry: &'a MpiGeometry) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::NoViews);
        }
        for v in views {
            if !v.image.is_finite() {
                return Err(Error::NonFinite("input view".into()));
            }
        }
        let homographies = views
            .iter()
            .map(|v| geometry.homographies(&v.camera))
            .collect::<Result<_>>()?;
        Ok(Self {
            views,
            geometry,
            homographies,
        })
    }

    pub fn cameras(&self) -> Vec<&'a Camera> {
        self.views.iter().map(|v| &v.camera).collect()
    }

    pub fn check_network(&self, net: &UpdateNetwork) -> Result<()> {
        net.validate()
    }

    fn view_size(&self, k: usize) -> (usize, usize) {
        (self.views[k].camera.width(), self.views[k].camera.height())
    }

    fn source(&self, k: usize, window: Rect) -> Patch {
        Patch {
            rect: window,
            image: self.views[k].image.crop(window),
        }
    }
}

#[inline]
fn rect_pixel(rect: Rect, i: usize) -> (i64, i64) {
    let w = rect.width();
    (rect.x0 + (i % w) as i64, rect.y0 + (i / w) as i64)
}

fn chunks(pixels: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..pixels).step_by(CHUNK).map(move |s| (s, (s + CHUNK).min(pixels)))
}

/// Premultiplied RGBA of a raw state patch.
pub(crate) fn rgba_patch(raw: &Patch) -> Patch {
    let mut out = Patch::zeros(raw.rect, 4);
    let c = raw.channels();
    for (o, r) in out
        .image
        .data_mut()
        .chunks_exact_mut(4)
        .zip(raw.image.data().chunks_exact(c))
    {
        rgba_from_raw(r, o);
    }
    out
}

/// One view's rendering of the current iterate over a window.
pub(crate) struct ViewRender {
    window: Rect,
    warped: Vec<Image>,
    composite: Composite,
}

fn render_planes(rgba: &[Patch], homographies: &[Homography], window: Rect) -> ViewRender {
    let warped: Vec<Image> = rgba
        .iter()
        .zip(homographies)
        .map(|(p, h)| resample(p, h.inverse_matrix(), window).image)
        .collect();
    let composite = composite(&warped.iter().collect::<Vec<_>>());
    ViewRender {
        window,
        warped,
        composite,
    }
}

impl ViewRender {
    fn bytes(&self) -> usize {
        let px = self.window.area();
        px * (self.warped.len() * 8 + 3) * 8
    }
}

/// Activations of one unrolled pass kept for the reverse sweep.
pub(crate) struct Tape {
    init: Vec<Vec<NetCache>>,
    updates: Vec<UpdateTape>,
}

struct UpdateTape {
    prev_raw: Vec<Patch>,
    renders: Vec<ViewRender>,
    caches: Vec<Vec<NetCache>>,
}

fn init_inputs(problem: &Problem, sources: &[Patch], d: usize, rect: Rect, lo: usize, hi: usize) -> Vec<Vec<f64>> {
    (0..problem.views.len())
        .map(|k| {
            let h = problem.homographies[k][d].matrix();
            let (w, hh) = problem.view_size(k);
            let mut x = vec![0.0; (hi - lo) * 4];
            for (i, row) in (lo..hi).zip(x.chunks_exact_mut(4)) {
                let (px, py) = rect_pixel(rect, i);
                if let Some((sx, sy)) = project(h, px as f64, py as f64) {
                    sample_into(&sources[k], sx, sy, &mut row[..3]);
                }
                row[3] = coverage(h, px as f64, py as f64, w, hh);
            }
            x
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn update_inputs(
    prev_raw: &Patch,
    prev_rgba: &Patch,
    comps: &[Vec<Patch>],
    d: usize,
    ablation: Ablation,
    rect: Rect,
    lo: usize,
    hi: usize,
) -> Vec<Vec<f64>> {
    let e = prev_raw.channels() - 4;
    let width = 4 + e + channel::WITH_MASK;
    comps
        .iter()
        .map(|per_plane| {
            let mut x = vec![0.0; (hi - lo) * width];
            for (i, row) in (lo..hi).zip(x.chunks_exact_mut(width)) {
                let (px, py) = rect_pixel(rect, i);
                row[..4].copy_from_slice(prev_rgba.at(px, py).unwrap());
                row[4..4 + e].copy_from_slice(&prev_raw.at(px, py).unwrap()[4..]);
                let c = &mut row[4 + e..];
                c.copy_from_slice(per_plane[d].at(px, py).unwrap());
                ablation.apply(c);
            }
            x
        })
        .collect()
}

/// Runs a network over all pixels of `rect`, `CHUNK` pixels at a time.
fn eval_net(
    net: &IterationNet,
    rect: Rect,
    inputs: impl Fn(usize, usize) -> Vec<Vec<f64>>,
    meter: &MemoryMeter,
    mut caches: Option<&mut Vec<NetCache>>,
) -> Vec<f64> {
    let out_c = net.output_channels();
    let mut out = vec![0.0; rect.area() * out_c];
    for (lo, hi) in chunks(rect.area()) {
        let x = inputs(lo, hi);
        let (y, cache) = net.forward(x, hi - lo);
        let _h = meter.hold(cache.bytes());
        out[lo * out_c..hi * out_c].copy_from_slice(&y);
        if let Some(c) = caches.as_deref_mut() {
            c.push(cache);
        }
    }
    out
}

fn patch_bytes(patches: &[Patch]) -> usize {
    patches.iter().map(Patch::bytes).sum()
}

fn check_footprint(problem: &Problem, fp: &TileFootprint) -> Result<()> {
    let d = problem.geometry.planes();
    let k = problem.views.len();
    if fp.mpi_rects.iter().any(|r| r.len() != d) || fp.view_rects.iter().any(|v| v.len() != k) {
        return Err(Error::ShapeMismatch("footprint does not match problem".into()));
    }
    Ok(())
}

/// Forward pass over a footprint. Returns the raw state on the output
/// rectangles and, when `record`, the tape for [`backward`].
pub(crate) fn forward(
    problem: &Problem,
    kind: SolveKind<'_>,
    ablation: Ablation,
    fp: &TileFootprint,
    meter: &MemoryMeter,
    record: bool,
) -> Result<(Vec<Patch>, Option<Tape>)> {
    check_footprint(problem, fp)?;
    let planes = problem.geometry.planes();
    let views = problem.views.len();
    let mut tape = Tape {
        init: Vec::new(),
        updates: Vec::new(),
    };

    // Level 0.
    let mut raw: Vec<Patch> = match kind {
        SolveKind::Learned(net) => {
            if net.len() != fp.updates() + 1 {
                return Err(Error::InvalidParameter(format!(
                    "{} iteration nets for a footprint of {} updates",
                    net.len(),
                    fp.updates()
                )));
            }
            let sources: Vec<Patch> = (0..views).map(|k| problem.source(k, fp.view_rects[0][k])).collect();
            let _src = meter.hold(patch_bytes(&sources));
            let init = &net.iterations[0];
            (0..planes)
                .map(|d| {
                    let rect = fp.mpi_rects[0][d];
                    let mut caches = Vec::new();
                    let out = eval_net(
                        init,
                        rect,
                        |lo, hi| init_inputs(problem, &sources, d, rect, lo, hi),
                        meter,
                        record.then_some(&mut caches),
                    );
                    tape.init.push(caches);
                    Patch {
                        rect,
                        image: Image::from_vec(rect.width(), rect.height(), init.output_channels(), out)
                            .expect("network output shape"),
                    }
                })
                .collect()
        }
        SolveKind::Classic { step_size } => {
            if !(step_size.is_finite() && step_size >= 0.0) {
                return Err(Error::InvalidParameter(format!("step size {step_size}")));
            }
            fp.mpi_rects[0].iter().map(|r| Patch::zeros(*r, 4)).collect()
        }
    };
    let mut raw_hold = meter.hold(patch_bytes(&raw));

    for n in 1..=fp.updates() {
        let rgba: Vec<Patch> = raw.iter().map(rgba_patch).collect();
        let _rgba_hold = meter.hold(patch_bytes(&rgba));
        let next = match kind {
            SolveKind::Learned(net) => {
                let mut renders = Vec::new();
                let mut comps: Vec<Vec<Patch>> = Vec::with_capacity(views);
                let mut comp_holds = Vec::new();
                let mut render_holds = Vec::new();
                for k in 0..views {
                    let window = fp.view_rects[n][k];
                    let source = problem.source(k, window);
                    let _s = meter.hold(source.bytes());
                    let r = render_planes(&rgba, &problem.homographies[k], window);
                    let rh = meter.hold(r.bytes());
                    let per_plane: Vec<Patch> = (0..planes)
                        .map(|d| {
                            sample_components(
                                &source,
                                &r.composite,
                                window,
                                d,
                                problem.homographies[k][d].matrix(),
                                fp.mpi_rects[n][d],
                                problem.view_size(k),
                            )
                        })
                        .collect();
                    comp_holds.push(meter.hold(patch_bytes(&per_plane)));
                    comps.push(per_plane);
                    if record {
                        renders.push(r);
                        render_holds.push(rh);
                    }
                }
                let update = &net.iterations[n];
                let mut caches_all = Vec::new();
                let next: Vec<Patch> = (0..planes)
                    .map(|d| {
                        let rect = fp.mpi_rects[n][d];
                        let mut caches = Vec::new();
                        let delta = eval_net(
                            update,
                            rect,
                            |lo, hi| update_inputs(&raw[d], &rgba[d], &comps, d, ablation, rect, lo, hi),
                            meter,
                            record.then_some(&mut caches),
                        );
                        caches_all.push(caches);
                        let mut out = raw[d].crop(rect);
                        for (o, v) in out.image.data_mut().iter_mut().zip(&delta) {
                            *o += v;
                        }
                        out
                    })
                    .collect();
                if record {
                    tape.updates.push(UpdateTape {
                        prev_raw: raw.clone(),
                        renders,
                        caches: caches_all,
                    });
                }
                next
            }
            SolveKind::Classic { step_size } => classic_update(problem, &raw, &rgba, fp, n, step_size, meter)?,
        };
        let next_hold = meter.hold(patch_bytes(&next));
        raw = next;
        raw_hold = next_hold;
    }
    drop(raw_hold);
    for p in &raw {
        if !p.image.is_finite() {
            return Err(Error::NonFinite("solver state".into()));
        }
    }
    Ok((raw, record.then_some(tape)))
}

/// One gradient step on `sum_k ||I~_k - I_k||^2` in the logit domain.
fn classic_update(
    problem: &Problem,
    raw: &[Patch],
    rgba: &[Patch],
    fp: &TileFootprint,
    n: usize,
    step_size: f64,
    meter: &MemoryMeter,
) -> Result<Vec<Patch>> {
    let planes = problem.geometry.planes();
    let mut g_rgba: Vec<Patch> = (0..planes).map(|d| Patch::zeros(fp.mpi_rects[n][d], 4)).collect();
    let _g = meter.hold(patch_bytes(&g_rgba));
    for k in 0..problem.views.len() {
        let window = fp.view_rects[n][k];
        let source = problem.source(k, window);
        let r = render_planes(rgba, &problem.homographies[k], window);
        let _rh = meter.hold(r.bytes() + source.bytes());
        let mut residual = r.composite.color.clone();
        for (v, t) in residual.data_mut().iter_mut().zip(source.image.data()) {
            *v = 2.0 * (*v - t);
        }
        let refs: Vec<&Image> = r.warped.iter().collect();
        let per_plane = composite_backward(&refs, &r.composite, Some(&residual), None, None);
        for (d, g) in per_plane.into_iter().enumerate() {
            // Inverse warp of the view-space gradient.
            let back = resample(
                &Patch { rect: window, image: g },
                problem.homographies[k][d].matrix(),
                fp.mpi_rects[n][d],
            );
            for (a, b) in g_rgba[d].image.data_mut().iter_mut().zip(back.image.data()) {
                *a += b;
            }
        }
    }
    g_rgba
        .iter()
        .enumerate()
        .map(|(d, g)| {
            if !g.image.is_finite() {
                return Err(Error::NonFinite("classic gradient".into()));
            }
            let rect = fp.mpi_rects[n][d];
            let mut out = raw[d].crop(rect);
            for (o, gp) in out.image.data_mut().chunks_exact_mut(4).zip(g.image.data().chunks_exact(4)) {
                let mut g_raw = [0.0; 4];
                rgba_from_raw_backward(o, gp, &mut g_raw);
                for (v, gr) in o.iter_mut().zip(g_raw) {
                    *v -= step_size * gr;
                }
            }
            Ok(out)
        })
        .collect()
}

/// One classic step from an explicit raw state on the footprint's level 0.
pub(crate) fn classic_from(
    problem: &Problem,
    raw: Vec<Patch>,
    fp: &TileFootprint,
    step_size: f64,
    meter: &MemoryMeter,
) -> Result<Vec<Patch>> {
    let rgba: Vec<Patch> = raw.iter().map(rgba_patch).collect();
    classic_update(problem, &raw, &rgba, fp, 1, step_size, meter)
}

/// Untracked forward pass.
pub(crate) fn solve_window(
    problem: &Problem,
    kind: SolveKind<'_>,
    ablation: Ablation,
    fp: &TileFootprint,
    meter: &MemoryMeter,
) -> Result<Vec<Patch>> {
    forward(problem, kind, ablation, fp, meter, false).map(|(raw, _)| raw)
}

/// Reverse sweep of a recorded learned pass. `grad_final` is the gradient
/// with respect to the raw output state; weight gradients accumulate into
/// `grads`.
pub(crate) fn backward(
    problem: &Problem,
    net: &UpdateNetwork,
    ablation: Ablation,
    fp: &TileFootprint,
    tape: &Tape,
    grad_final: Vec<Patch>,
    grads: &mut UpdateNetwork,
) {
    let planes = problem.geometry.planes();
    let views = problem.views.len();
    let e = net.extra_channels;
    let state_c = 4 + e;
    let in_w = 4 + e + channel::WITH_MASK;
    let mut g = grad_final;
    for n in (1..=fp.updates()).rev() {
        let ut = &tape.updates[n - 1];
        let update = &net.iterations[n];
        let mut g_prev: Vec<Patch> = ut.prev_raw.iter().map(|p| Patch::zeros(p.rect, state_c)).collect();
        let mut g_rgba: Vec<Patch> = ut.prev_raw.iter().map(|p| Patch::zeros(p.rect, 4)).collect();
        let mut g_comp: Vec<Vec<Patch>> = (0..views)
            .map(|_| (0..planes).map(|d| Patch::zeros(fp.mpi_rects[n][d], channel::WITH_MASK)).collect())
            .collect();
        for d in 0..planes {
            let rect = fp.mpi_rects[n][d];
            // Residual connection.
            for y in rect.y0..rect.y1 {
                for x in rect.x0..rect.x1 {
                    let src = g[d].at(x, y).unwrap();
                    for (a, b) in g_prev[d].at_mut(x, y).unwrap().iter_mut().zip(src) {
                        *a += b;
                    }
                }
            }
            for ((lo, hi), cache) in chunks(rect.area()).zip(&ut.caches[d]) {
                let grad_out = &g[d].image.data()[lo * state_c..hi * state_c];
                let g_in = update.backward(cache, grad_out, &mut grads.iterations[n], true);
                for (k, gk) in g_in.iter().enumerate() {
                    for (i, row) in (lo..hi).zip(gk.chunks_exact(in_w)) {
                        let (x, y) = rect_pixel(rect, i);
                        for (a, b) in g_rgba[d].at_mut(x, y).unwrap().iter_mut().zip(&row[..4]) {
                            *a += b;
                        }
                        for (a, b) in g_prev[d].at_mut(x, y).unwrap()[4..].iter_mut().zip(&row[4..4 + e]) {
                            *a += b;
                        }
                        let gc = g_comp[k][d].at_mut(x, y).unwrap();
                        gc.copy_from_slice(&row[4 + e..]);
                        ablation.apply(gc);
                    }
                }
            }
        }
        for (k, r) in ut.renders.iter().enumerate() {
            let (w, h) = (r.window.width(), r.window.height());
            let mut g_rendered = Image::zeros(w, h, 3);
            let mut g_acc: Vec<Image> = (0..planes).map(|_| Image::zeros(w, h, 3)).collect();
            let mut g_trans: Vec<Image> = (0..planes).map(|_| Image::zeros(w, h, 1)).collect();
            for d in 0..planes {
                sample_components_backward(
                    &g_comp[k][d],
                    problem.homographies[k][d].matrix(),
                    r.window,
                    &mut g_rendered,
                    &mut g_acc[d],
                    &mut g_trans[d],
                );
            }
            let refs: Vec<&Image> = r.warped.iter().collect();
            let g_warped = composite_backward(&refs, &r.composite, Some(&g_rendered), Some(&g_acc), Some(&g_trans));
            for (d, gw) in g_warped.into_iter().enumerate() {
                resample_adjoint_into(
                    &Patch {
                        rect: r.window,
                        image: gw,
                    },
                    problem.homographies[k][d].inverse_matrix(),
                    &mut g_rgba[d],
                );
            }
        }
        for d in 0..planes {
            for ((raw, gr), gp) in ut.prev_raw[d]
                .image
                .data()
                .chunks_exact(state_c)
                .zip(g_rgba[d].image.data().chunks_exact(4))
                .zip(g_prev[d].image.data_mut().chunks_exact_mut(state_c))
            {
                rgba_from_raw_backward(raw, gr, gp);
            }
        }
        g = g_prev;
    }
    let init = &net.iterations[0];
    for d in 0..planes {
        let rect = fp.mpi_rects[0][d];
        for ((lo, hi), cache) in chunks(rect.area()).zip(&tape.init[d]) {
            let grad_out = &g[d].image.data()[lo * state_c..hi * state_c];
            init.backward(cache, grad_out, &mut grads.iterations[0], false);
        }
    }
}

/// Per-pixel loss on a rendered crop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
    L2,
}

/// Loss of rendering the raw output state into a crop of `target`, divided
/// by the crop area, and its gradient with respect to the raw state.
pub(crate) fn crop_loss(
    raw: &[Patch],
    to_target: &[Homography],
    crop: Rect,
    ground_truth: &Image,
    loss: LossKind,
) -> (f64, Vec<Patch>, Image) {
    let rgba: Vec<Patch> = raw.iter().map(rgba_patch).collect();
    let r = render_planes(&rgba, to_target, crop);
    let area = crop.area() as f64;
    let mut g_color = Image::zeros(crop.width(), crop.height(), 3);
    let mut total = 0.0;
    for ((g, o), t) in g_color
        .data_mut()
        .iter_mut()
        .zip(r.composite.color.data())
        .zip(ground_truth.data())
    {
        let diff = o - t;
        match loss {
            LossKind::L1 => {
                total += diff.abs();
                *g = diff.signum() / area;
            }
            LossKind::L2 => {
                total += diff * diff;
                *g = 2.0 * diff / area;
            }
        }
    }
    let refs: Vec<&Image> = r.warped.iter().collect();
    let g_warped = composite_backward(&refs, &r.composite, Some(&g_color), None, None);
    let grads = g_warped
        .into_iter()
        .zip(to_target)
        .zip(raw.iter().zip(&rgba))
        .map(|((gw, h), (raw_p, rgba_p))| {
            let mut g_rgba = Patch::zeros(rgba_p.rect, 4);
            resample_adjoint_into(&Patch { rect: crop, image: gw }, h.inverse_matrix(), &mut g_rgba);
            let c = raw_p.channels();
            let mut g_raw = Patch::zeros(raw_p.rect, c);
            for ((rr, gr), out) in raw_p
                .image
                .data()
                .chunks_exact(c)
                .zip(g_rgba.image.data().chunks_exact(4))
                .zip(g_raw.image.data_mut().chunks_exact_mut(c))
            {
                rgba_from_raw_backward(rr, gr, out);
            }
            g_raw
        })
        .collect();
    (total / area, grads, r.composite.color)
}

/// Composited colour of `mpi` over one output window of a view.
pub(crate) fn render_window(
    mpi: &crate::mpi::Mpi,
    homographies: &[Homography],
    window: Rect,
    meter: &MemoryMeter,
) -> Patch {
    let bounds = mpi.reference().image_rect();
    let sources: Vec<Patch> = mpi
        .planes()
        .iter()
        .zip(homographies)
        .map(|(p, h)| {
            let rect = map_rect(h.inverse_matrix(), window, bounds);
            Patch {
                rect,
                image: p.rgba.crop(rect),
            }
        })
        .collect();
    let _s = meter.hold(patch_bytes(&sources));
    let r = render_planes(&sources, homographies, window);
    let _r = meter.hold(r.bytes());
    Patch {
        rect: window,
        image: r.composite.color,
    }
}

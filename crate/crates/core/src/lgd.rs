//! The unrolled solver: initialization from plane sweeps, classic gradient
//! steps, learned updates and the full N-iteration solve.

use serde::{Deserialize, Serialize};

use crate::engine::{Ablation, Problem};
use crate::error::{Error, Result};
use crate::geometry::{coverage, Camera, View};
use crate::gradients::{channel, GradientComponents, MpiGradient};
use crate::image::{Image, Patch};
use crate::mpi::{make_plane_disparities, rgba_from_raw_backward, Mpi, MpiGeometry, MpiState};
use crate::network::{update_inputs, IterationNet, UpdateNetwork, INIT_INPUTS};
use crate::tiling::{tiled_solve, MemoryMeter, TileFootprint, TiledSolver};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    ClassicGd,
    Learned,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" | "classic_gd" => Ok(Self::ClassicGd),
            "learned" => Ok(Self::Learned),
            _ => Err(Error::InvalidParameter(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Step size of classic mode.
    pub step_size: f64,
    pub mode: UpdateMode,
    pub planes: usize,
    pub near: f64,
    pub far: f64,
    pub extra_channels: usize,
    pub ablation: Ablation,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            step_size: 0.05,
            mode: UpdateMode::Learned,
            planes: 32,
            near: 1.0,
            far: 100.0,
            extra_channels: 4,
            ablation: Ablation::FULL,
        }
    }
}

impl SolverConfig {
    /// Planes placed in the frustum of `reference`.
    pub fn geometry(&self, reference: Camera) -> Result<MpiGeometry> {
        MpiGeometry::new(reference, make_plane_disparities(self.near, self.far, self.planes)?)
    }

    /// Planes placed in the frustum of the mean input camera.
    pub fn geometry_for(&self, views: &[View]) -> Result<MpiGeometry> {
        let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
        self.geometry(Camera::centroid(&cams)?)
    }
}

fn check_views(views: &[View]) -> Result<()> {
    if views.is_empty() {
        return Err(Error::NoViews);
    }
    Ok(())
}

/// Runs `net` at every MPI pixel of every plane.
fn per_pixel(net: &IterationNet, inputs: &[Vec<Image>], width: usize, height: usize) -> Vec<Vec<f64>> {
    let planes = inputs[0].len();
    (0..planes)
        .map(|d| {
            let x: Vec<Vec<f64>> = inputs.iter().map(|per_view| per_view[d].data().to_vec()).collect();
            net.forward(x, width * height).0
        })
        .collect()
}

/// Plane sweep of every view with its coverage mask: `[k][d]`, 4 channels.
pub fn plane_sweep(views: &[View], geometry: &MpiGeometry) -> Result<Vec<Vec<Image>>> {
    check_views(views)?;
    let rect = geometry.reference.image_rect();
    views
        .iter()
        .map(|v| {
            let hs = geometry.homographies(&v.camera)?;
            let src = Patch::full(v.image.clone());
            let (w, h) = (v.camera.width(), v.camera.height());
            Ok(hs
                .iter()
                .map(|hd| {
                    let psv = crate::geometry::resample(&src, hd.matrix(), rect).image;
                    Image::from_fn(geometry.width(), geometry.height(), INIT_INPUTS, |x, y, c| {
                        if c < 3 {
                            psv.get(x, y, c)
                        } else {
                            coverage(hd.matrix(), x as f64, y as f64, w, h)
                        }
                    })
                })
                .collect())
        })
        .collect()
}

/// Initial state from the input plane sweeps through the initialization net.
pub fn init_from_psv(views: &[View], geometry: &MpiGeometry, net: &IterationNet) -> Result<MpiState> {
    net.validate(INIT_INPUTS, net.output_channels())?;
    if net.output_channels() < 4 {
        return Err(Error::WeightShape("initialization head narrower than RGBA".into()));
    }
    let psv = plane_sweep(views, geometry)?;
    let (w, h) = (geometry.width(), geometry.height());
    let out = per_pixel(net, &psv, w, h);
    Ok(MpiState {
        geometry: geometry.clone(),
        raw: out
            .into_iter()
            .map(|o| Image::from_vec(w, h, net.output_channels(), o))
            .collect::<Result<_>>()?,
    })
}

/// One learned update: the network sees the RGBA and extra channels of
/// `state` with each view's components and adds its output to the raw state.
pub fn update_step(
    state: &MpiState,
    components: &[GradientComponents],
    net: &IterationNet,
    ablation: Ablation,
) -> Result<MpiState> {
    if components.is_empty() {
        return Err(Error::NoViews);
    }
    let e = state.extra_channels();
    let c = 4 + e;
    net.validate(update_inputs(e), c)?;
    let (w, h) = (state.geometry.width(), state.geometry.height());
    let planes = state.geometry.planes();
    for comp in components {
        if comp.planes.len() != planes {
            return Err(Error::PlaneCountMismatch {
                expected: planes,
                found: comp.planes.len(),
            });
        }
        if comp
            .planes
            .iter()
            .any(|p| p.width() != w || p.height() != h || p.channels() != channel::WITH_MASK)
        {
            return Err(Error::ShapeMismatch("gradient components do not match the state".into()));
        }
    }
    let rgba = state.rgba();
    let width = update_inputs(e);
    let inputs: Vec<Vec<Image>> = components
        .iter()
        .map(|comp| {
            (0..planes)
                .map(|d| {
                    let mut x = Image::zeros(w, h, width);
                    for (i, row) in x.data_mut().chunks_exact_mut(width).enumerate() {
                        row[..4].copy_from_slice(&rgba[d].data()[i * 4..i * 4 + 4]);
                        row[4..c].copy_from_slice(&state.raw[d].data()[i * c + 4..(i + 1) * c]);
                        let comps = &mut row[c..];
                        comps.copy_from_slice(
                            &comp.planes[d].data()[i * channel::WITH_MASK..(i + 1) * channel::WITH_MASK],
                        );
                        ablation.apply(comps);
                    }
                    x
                })
                .collect()
        })
        .collect();
    let deltas = per_pixel(net, &inputs, w, h);
    let mut next = state.clone();
    for (raw, delta) in next.raw.iter_mut().zip(deltas) {
        for (r, v) in raw.data_mut().iter_mut().zip(delta) {
            *r += v;
        }
    }
    Ok(next)
}

/// `raw <- raw - step * dL/draw`, chaining `grad` (with respect to the
/// premultiplied RGBA) through the sigmoid conversion.
pub fn classic_gd_step(state: &MpiState, grad: &MpiGradient, step_size: f64) -> Result<MpiState> {
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if grad.planes.len() != state.raw.len() {
        return Err(Error::PlaneCountMismatch {
            expected: state.raw.len(),
            found: grad.planes.len(),
        });
    }
    let mut next = state.clone();
    for (raw, g) in next.raw.iter_mut().zip(&grad.planes) {
        if g.width() != raw.width() || g.height() != raw.height() || g.channels() != 4 {
            return Err(Error::ShapeMismatch("gradient does not match the state".into()));
        }
        let c = raw.channels();
        for (r, gp) in raw.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(4)) {
            let mut g_raw = [0.0; 4];
            rgba_from_raw_backward(r, gp, &mut g_raw);
            for (v, gr) in r.iter_mut().zip(g_raw) {
                *v -= step_size * gr;
            }
        }
    }
    Ok(next)
}

/// Interprets `config` against `weights`, returning the tiled-driver solver.
fn solver<'a>(config: &SolverConfig, weights: Option<&'a UpdateNetwork>) -> Result<TiledSolver<'a>> {
    if config.iterations == 0 {
        return Err(Error::InvalidParameter("at least one iteration".into()));
    }
    match config.mode {
        UpdateMode::ClassicGd => Ok(TiledSolver::Classic {
            iterations: config.iterations,
            step_size: config.step_size,
        }),
        UpdateMode::Learned => {
            let net = weights.ok_or_else(|| Error::InvalidParameter("learned mode needs weights".into()))?;
            if net.len() != config.iterations {
                return Err(Error::WeightShape(format!(
                    "weights hold {} iterations, config asks for {}",
                    net.len(),
                    config.iterations
                )));
            }
            Ok(TiledSolver::Learned(net))
        }
    }
}

/// Full solve: initialization then `N - 1` learned updates, or `N` classic
/// steps from the all-zero raw state.
pub fn lgd_solve(
    views: &[View],
    geometry: &MpiGeometry,
    config: &SolverConfig,
    weights: Option<&UpdateNetwork>,
) -> Result<Mpi> {
    solve(views, geometry, config, weights, None, &MemoryMeter::new())
}

/// [`lgd_solve`], optionally tiled.
pub fn solve(
    views: &[View],
    geometry: &MpiGeometry,
    config: &SolverConfig,
    weights: Option<&UpdateNetwork>,
    tile_size: Option<usize>,
    meter: &MemoryMeter,
) -> Result<Mpi> {
    let s = solver(config, weights)?;
    tiled_solve(views, geometry, s, config.ablation, tile_size, meter)
}

/// Raw classic-mode state after each step, for loss monitoring.
pub fn classic_trajectory(
    views: &[View],
    geometry: &MpiGeometry,
    step_size: f64,
    steps: usize,
    mut observe: impl FnMut(usize, &MpiState) -> Result<()>,
) -> Result<MpiState> {
    let problem = Problem::new(views, geometry)?;
    let cameras = problem.cameras();
    let fp = TileFootprint::full(geometry, &cameras, 1);
    let meter = MemoryMeter::new();
    let mut state = MpiState::zeros(geometry, 0);
    observe(0, &state)?;
    for step in 1..=steps {
        let patches: Vec<Patch> = state.raw.iter().cloned().map(Patch::full).collect();
        let raw = crate::engine::classic_from(&problem, patches, &fp, step_size, &meter)?;
        state.raw = raw.into_iter().map(|p| p.image).collect();
        observe(step, &state)?;
    }
    Ok(state)
}

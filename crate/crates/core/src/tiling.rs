//! Footprints of target crops across unrolled iterations, and tiled
//! execution of solving and rendering.
//!
//! Iterate `n` of the solver lives on a per-plane MPI rectangle `R[n][d]`.
//! Computing it needs the rendering of every view over the window
//! `V[n][k]` covering `H_kd(R[n][d])`, and that rendering needs iterate
//! `n - 1` over `H_kd^-1(V[n][k])`. Propagating these rectangles backwards
//! from the final crop gives a sound, conservative footprint.

use std::cell::Cell;

use nalgebra::Matrix3;
use serde::Serialize;

use crate::engine::{self, Problem, SolveKind};
use crate::error::{Error, Result};
use crate::geometry::{project, Camera, Homography, View};
use crate::image::{Image, Rect};
use crate::mpi::{Mpi, MpiGeometry, MpiPlane};
use crate::network::UpdateNetwork;

/// Rectangles of pixel centres whose bilinear taps may land in `rect` once
/// mapped through `m`, clipped to `bounds`.
///
/// The image of a rectangle under a homography with positive `w` at all
/// four corners is the convex quadrilateral of the mapped corners, so the
/// corner bounding box is sound.
pub fn map_rect(m: &Matrix3<f64>, rect: Rect, bounds: Rect) -> Rect {
    if rect.is_empty() {
        return Rect::EMPTY;
    }
    let corners = [
        (rect.x0, rect.y0),
        (rect.x1 - 1, rect.y0),
        (rect.x0, rect.y1 - 1),
        (rect.x1 - 1, rect.y1 - 1),
    ];
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in corners {
        match project(m, x as f64, y as f64) {
            Some((u, v)) if u.is_finite() && v.is_finite() => {
                lo_x = lo_x.min(u);
                lo_y = lo_y.min(v);
                hi_x = hi_x.max(u);
                hi_y = hi_y.max(v);
            }
            // The rectangle straddles the horizon: give up on bounding it.
            _ => return bounds,
        }
    }
    let clamp = |v: f64| v.clamp(-1e15, 1e15);
    Rect::new(
        clamp((lo_x - 1e-6).floor()) as i64,
        clamp((lo_y - 1e-6).floor()) as i64,
        clamp((hi_x + 1e-6).floor()) as i64 + 2,
        clamp((hi_y + 1e-6).floor()) as i64 + 2,
    )
    .intersect(&bounds)
}

/// Per-iteration MPI rectangles and per-view windows for one output region.
///
/// With `L` rendering updates, `mpi_rects` has `L + 1` levels (level 0 is
/// the initialization, level `L` the output) and `view_rects[n]` is the
/// window of each view rendered by update `n` for `n >= 1`. `view_rects[0]`
/// holds the source crops read by the initialization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TileFootprint {
    pub mpi_rects: Vec<Vec<Rect>>,
    pub view_rects: Vec<Vec<Rect>>,
    /// Receptive-field padding added per iteration.
    pub radius: usize,
    /// `(level, view)` pairs whose window is empty.
    pub empty_views: Vec<(usize, usize)>,
}

impl TileFootprint {
    pub fn updates(&self) -> usize {
        self.mpi_rects.len() - 1
    }

    /// Footprint that covers everything: used by untiled execution.
    pub fn full(geometry: &MpiGeometry, cameras: &[&Camera], updates: usize) -> Self {
        let mpi = geometry.reference.image_rect();
        Self {
            mpi_rects: vec![vec![mpi; geometry.planes()]; updates + 1],
            view_rects: vec![cameras.iter().map(|c| c.image_rect()).collect(); updates + 1],
            radius: 0,
            empty_views: Vec::new(),
        }
    }

    /// Output rectangle of plane `d`.
    pub fn output(&self, d: usize) -> Rect {
        self.mpi_rects[self.updates()][d]
    }

    /// Total MPI pixels across all levels and planes.
    pub fn mpi_pixels(&self) -> usize {
        self.mpi_rects.iter().flatten().map(Rect::area).sum()
    }
}

fn ensure_same_planes(geometry: &MpiGeometry, final_rects: &[Rect]) -> Result<()> {
    if final_rects.len() != geometry.planes() {
        return Err(Error::PlaneCountMismatch {
            expected: geometry.planes(),
            found: final_rects.len(),
        });
    }
    Ok(())
}

/// Propagates per-plane output rectangles back through `updates` rendering
/// updates. `homographies[k][d]` maps MPI pixels of plane `d` to view `k`.
pub fn propagate_footprint(
    geometry: &MpiGeometry,
    cameras: &[&Camera],
    homographies: &[Vec<Homography>],
    final_rects: Vec<Rect>,
    updates: usize,
    radius: usize,
) -> Result<TileFootprint> {
    ensure_same_planes(geometry, &final_rects)?;
    let mpi_bounds = geometry.reference.image_rect();
    let window = |rects: &[Rect], k: usize| -> Rect {
        let bounds = cameras[k].image_rect();
        rects
            .iter()
            .zip(&homographies[k])
            .fold(Rect::EMPTY, |acc, (r, h)| acc.union(&map_rect(h.matrix(), *r, bounds)))
    };
    let mut mpi_rects = vec![final_rects];
    let mut view_rects = Vec::new();
    for _ in 0..updates {
        let current = mpi_rects.last().unwrap().clone();
        let windows: Vec<Rect> = (0..cameras.len()).map(|k| window(&current, k)).collect();
        let previous = current
            .iter()
            .enumerate()
            .map(|(d, r)| {
                let mut prev = r.dilate(radius as i64).intersect(&mpi_bounds);
                for (k, v) in windows.iter().enumerate() {
                    prev = prev.union(&map_rect(homographies[k][d].inverse_matrix(), *v, mpi_bounds));
                }
                prev
            })
            .collect();
        view_rects.push(windows);
        mpi_rects.push(previous);
    }
    let sources: Vec<Rect> = (0..cameras.len())
        .map(|k| window(mpi_rects.last().unwrap(), k))
        .collect();
    view_rects.push(sources);
    mpi_rects.reverse();
    view_rects.reverse();
    let empty_views = view_rects
        .iter()
        .enumerate()
        .flat_map(|(n, vs)| {
            vs.iter()
                .enumerate()
                .filter(|(_, r)| r.is_empty())
                .map(move |(k, _)| (n, k))
        })
        .collect();
    Ok(TileFootprint {
        mpi_rects,
        view_rects,
        radius,
        empty_views,
    })
}

/// Footprint for a `crop` of a `target` rendering of the solved MPI after
/// `iterations` learned iterations (`iterations - 1` rendering updates).
pub fn footprint_for_crop(
    target: &Camera,
    crop: Rect,
    geometry: &MpiGeometry,
    cameras: &[&Camera],
    iterations: usize,
    radius: usize,
) -> Result<TileFootprint> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("at least one iteration".into()));
    }
    if !target.image_rect().contains_rect(&crop) || crop.is_empty() {
        return Err(Error::InvalidParameter(format!("crop {crop:?} outside target image")));
    }
    let homographies = cameras
        .iter()
        .map(|c| geometry.homographies(c))
        .collect::<Result<Vec<_>>>()?;
    let to_target = geometry.homographies(target)?;
    let bounds = geometry.reference.image_rect();
    let finals = to_target
        .iter()
        .map(|h| map_rect(h.inverse_matrix(), crop, bounds))
        .collect();
    propagate_footprint(geometry, cameras, &homographies, finals, iterations - 1, radius)
}

/// Explicit accounting of the large working buffers held by solver code.
#[derive(Debug, Default)]
pub struct MemoryMeter {
    current: Cell<usize>,
    peak: Cell<usize>,
}

/// Releases its bytes from the meter when dropped.
#[must_use]
pub struct Hold<'a> {
    meter: &'a MemoryMeter,
    bytes: usize,
}

impl Drop for Hold<'_> {
    fn drop(&mut self) {
        self.meter.current.set(self.meter.current.get() - self.bytes);
    }
}

impl MemoryMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hold(&self, bytes: usize) -> Hold<'_> {
        let now = self.current.get() + bytes;
        self.current.set(now);
        if now > self.peak.get() {
            self.peak.set(now);
        }
        Hold { meter: self, bytes }
    }

    pub fn current(&self) -> usize {
        self.current.get()
    }

    pub fn peak(&self) -> usize {
        self.peak.get()
    }
}

/// Peak working-set comparison written by `--memory-report`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub tile_size: Option<usize>,
    pub tiles: usize,
    pub peak_bytes: usize,
    pub untiled_peak_bytes: Option<usize>,
    pub ratio: Option<f64>,
}

/// Which solver the tiled driver runs.
#[derive(Clone, Copy, Debug)]
pub enum TiledSolver<'a> {
    Learned(&'a UpdateNetwork),
    /// Classic gradient descent: iterations and step size.
    Classic { iterations: usize, step_size: f64 },
}

impl TiledSolver<'_> {
    fn updates(&self) -> usize {
        match self {
            TiledSolver::Learned(net) => net.len() - 1,
            TiledSolver::Classic { iterations, .. } => *iterations,
        }
    }

    fn kind(&self) -> SolveKind<'_> {
        match *self {
            TiledSolver::Learned(net) => SolveKind::Learned(net),
            TiledSolver::Classic { step_size, .. } => SolveKind::Classic { step_size },
        }
    }
}

/// Solves the MPI tile by tile. `None` runs a single untiled pass.
/// The result matches untiled execution up to float reassociation.
pub fn tiled_solve(
    views: &[View],
    geometry: &MpiGeometry,
    solver: TiledSolver<'_>,
    ablation: engine::Ablation,
    tile_size: Option<usize>,
    meter: &MemoryMeter,
) -> Result<Mpi> {
    let problem = Problem::new(views, geometry)?;
    if let TiledSolver::Learned(net) = solver {
        problem.check_network(net)?;
    }
    let (w, h) = (geometry.width(), geometry.height());
    let mut planes: Vec<Image> = (0..geometry.planes()).map(|_| Image::zeros(w, h, 4)).collect();
    let _out = meter.hold(planes.len() * w * h * 4 * 8);
    let cameras = problem.cameras();
    let updates = solver.updates();
    let footprints: Vec<TileFootprint> = match tile_size {
        None => vec![TileFootprint::full(geometry, &cameras, updates)],
        Some(t) if t >= w && t >= h => vec![TileFootprint::full(geometry, &cameras, updates)],
        Some(0) => return Err(Error::InvalidParameter("tile size must be positive".into())),
        Some(t) => Rect::tiles(w, h, t)
            .into_iter()
            .map(|tile| {
                propagate_footprint(
                    geometry,
                    &cameras,
                    &problem.homographies,
                    vec![tile; geometry.planes()],
                    updates,
                    0,
                )
            })
            .collect::<Result<_>>()?,
    };
    for fp in &footprints {
        let raw = engine::solve_window(&problem, solver.kind(), ablation, fp, meter)?;
        for (d, patch) in raw.iter().enumerate() {
            let rgba = engine::rgba_patch(patch);
            rgba.paste_into(&mut planes[d], fp.output(d));
        }
    }
    Mpi::new(
        geometry.reference.clone(),
        geometry
            .disparities
            .iter()
            .zip(planes)
            .map(|(&disparity, rgba)| MpiPlane { disparity, rgba })
            .collect(),
    )
}

/// Renders `mpi` into `camera` one output tile at a time, warping only the
/// plane regions each tile reads.
pub fn tiled_render(mpi: &Mpi, camera: &Camera, tile_size: usize, meter: &MemoryMeter) -> Result<Image> {
    if tile_size == 0 {
        return Err(Error::InvalidParameter("tile size must be positive".into()));
    }
    let geometry = mpi.geometry();
    let homographies = geometry.homographies(camera)?;
    let mut out = Image::zeros(camera.width(), camera.height(), 3);
    let _out = meter.hold(out.data().len() * 8);
    for tile in Rect::tiles(camera.width(), camera.height(), tile_size) {
        let color = engine::render_window(mpi, &homographies, tile, meter);
        color.paste_into(&mut out, tile);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn identity_rig_dilates_by_one_pixel() {
        let cam = Camera::simple(20.0, 16, 16, Vector3::zeros()).unwrap();
        let geometry = MpiGeometry::new(cam.clone(), vec![0.2, 0.4, 0.6]).unwrap();
        let crop = Rect::new(4, 5, 9, 11);
        let fp = footprint_for_crop(&cam, crop, &geometry, &[&cam], 1, 0).unwrap();
        assert_eq!(fp.mpi_rects.len(), 1);
        for r in &fp.mpi_rects[0] {
            assert_eq!(*r, crop.dilate(1));
        }
    }

    #[test]
    fn more_iterations_need_more() {
        let reference = Camera::simple(20.0, 16, 16, Vector3::zeros()).unwrap();
        let a = reference.with_center(Vector3::new(0.05, 0.0, 0.0));
        let b = reference.with_center(Vector3::new(-0.05, 0.02, 0.0));
        let geometry = MpiGeometry::new(reference.clone(), vec![0.25, 0.5, 1.0]).unwrap();
        let crop = Rect::new(6, 6, 10, 10);
        let one = footprint_for_crop(&reference, crop, &geometry, &[&a, &b], 1, 0).unwrap();
        let two = footprint_for_crop(&reference, crop, &geometry, &[&a, &b], 2, 0).unwrap();
        for d in 0..3 {
            assert!(two.mpi_rects[0][d].contains_rect(&one.mpi_rects[0][d]));
            assert!(two.mpi_rects[0][d].contains_rect(&two.mpi_rects[1][d]));
        }
    }

    #[test]
    fn meter_tracks_peak() {
        let m = MemoryMeter::new();
        {
            let _a = m.hold(10);
            let _b = m.hold(5);
            assert_eq!(m.current(), 15);
        }
        let _c = m.hold(3);
        assert_eq!((m.current(), m.peak()), (3, 15));
    }
}

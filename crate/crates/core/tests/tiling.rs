mod common;

use common::tiles::{instance, solver_config, state_pixels_sound, view_pixels_sound};
use mpi_lgd::compositor::render;
use mpi_lgd::image::Rect;
use mpi_lgd::lgd::{lgd_solve, solve, SolverConfig, UpdateMode};
use mpi_lgd::tiling::{map_rect, tiled_render, MemoryMeter};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn footprint_is_sound_for_view_pixels() {
    let mut partial = 0;
    for seed in 0..50u64 {
        let (ok, p) = view_pixels_sound(seed);
        assert!(ok, "seed {seed}");
        partial += p;
    }
    // The check is only meaningful when footprints leave pixels out.
    assert!(partial > 50, "{partial} of 100 view footprints are partial");
}

#[test]
fn footprint_is_sound_for_mpi_state() {
    let mut partial = 0;
    for seed in 0..50u64 {
        let (ok, p) = state_pixels_sound(seed);
        assert!(ok, "seed {seed}");
        partial += p;
    }
    assert!(partial > 100, "{partial} of 200 plane footprints are partial");
}

#[test]
fn tiled_solve_equals_untiled() {
    let inst = instance(7, 24, 4, 3);
    let config = solver_config(3);
    let meter = MemoryMeter::new();
    let full = solve(&inst.views, &inst.geometry, &config, Some(&inst.weights), None, &meter).unwrap();
    for t in [5, 8, 13] {
        let tiled = solve(&inst.views, &inst.geometry, &config, Some(&inst.weights), Some(t), &meter).unwrap();
        for (a, b) in full.planes().iter().zip(tiled.planes()) {
            assert!(a.rgba.max_abs_diff(&b.rgba) <= 1e-6, "tile {t}");
        }
    }
}

#[test]
fn tiled_classic_solve_equals_untiled() {
    let inst = instance(8, 16, 3, 1);
    let config = SolverConfig {
        iterations: 3,
        mode: UpdateMode::ClassicGd,
        step_size: 0.1,
        extra_channels: 0,
        ..SolverConfig::default()
    };
    let meter = MemoryMeter::new();
    let full = solve(&inst.views, &inst.geometry, &config, None, None, &meter).unwrap();
    for t in [4, 7] {
        let tiled = solve(&inst.views, &inst.geometry, &config, None, Some(t), &meter).unwrap();
        for (a, b) in full.planes().iter().zip(tiled.planes()) {
            assert!(a.rgba.max_abs_diff(&b.rgba) <= 1e-6);
        }
    }
}

#[test]
fn tiled_render_equals_render() {
    let inst = instance(9, 20, 4, 2);
    let mpi = lgd_solve(&inst.views, &inst.geometry, &solver_config(2), Some(&inst.weights)).unwrap();
    let full = render(&mpi, &inst.target).unwrap();
    for t in [3, 6, 11] {
        let meter = MemoryMeter::new();
        let tiled = tiled_render(&mpi, &inst.target, t, &meter).unwrap();
        assert!(full.max_abs_diff(&tiled) <= 1e-12);
        assert!(meter.peak() > 0);
    }
}

#[test]
fn tiles_use_less_memory() {
    let inst = instance(10, 32, 8, 2);
    let config = solver_config(2);
    let untiled = MemoryMeter::new();
    solve(&inst.views, &inst.geometry, &config, Some(&inst.weights), None, &untiled).unwrap();
    let tiled = MemoryMeter::new();
    solve(&inst.views, &inst.geometry, &config, Some(&inst.weights), Some(8), &tiled).unwrap();
    assert!(tiled.peak() < untiled.peak(), "{} vs {}", tiled.peak(), untiled.peak());
}

#[test]
fn zero_tile_size_is_rejected() {
    let inst = instance(11, 8, 2, 1);
    let meter = MemoryMeter::new();
    assert!(solve(&inst.views, &inst.geometry, &solver_config(1), Some(&inst.weights), Some(0), &meter).is_err());
}

proptest! {
    #[test]
    fn mapped_rect_contains_every_tap(seed in 0u64..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix3::new(
            1.0 + rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-5.0..5.0),
            rng.gen_range(-0.2..0.2), 1.0 + rng.gen_range(-0.2..0.2), rng.gen_range(-5.0..5.0),
            rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01), 1.0,
        );
        let x0 = rng.gen_range(0..20);
        let y0 = rng.gen_range(0..20);
        let r = Rect::new(x0, y0, x0 + rng.gen_range(1..8), y0 + rng.gen_range(1..8));
        let bounds = Rect::new(-100, -100, 100, 100);
        let mapped = map_rect(&m, r, bounds);
        for y in r.y0..r.y1 {
            for x in r.x0..r.x1 {
                let p = m * Vector3::new(x as f64, y as f64, 1.0);
                let (u, v) = (p.x / p.z, p.y / p.z);
                for (tx, ty, w) in mpi_lgd::geometry::bilinear_taps(u, v) {
                    if w > 0.0 {
                        prop_assert!(mapped.contains(tx, ty));
                    }
                }
            }
        }
    }
}

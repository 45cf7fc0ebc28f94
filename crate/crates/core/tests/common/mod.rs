#![allow(dead_code, unused_imports)]

use mpi_lgd::geometry::View;
use mpi_lgd::network::UpdateNetwork;
use mpi_lgd::scene::{generate_scene, render_views, SceneSpec, SyntheticScene};
use mpi_lgd::training::TrainingTuple;

pub use mpi_lgd::gradcheck::{miniature_config, rel_err};

pub fn miniature(seed: u64) -> (TrainingTuple, UpdateNetwork) {
    mpi_lgd::gradcheck::miniature(seed).unwrap()
}

pub fn scene_and_views(seed: u64, spec: &SceneSpec) -> (SyntheticScene, Vec<View>) {
    let scene = generate_scene(seed, spec).unwrap();
    let views = render_views(&scene, &spec.rig.cameras().unwrap()).unwrap();
    (scene, views)
}

pub mod tiles {
    use mpi_lgd::compositor::render;
    use mpi_lgd::engine::Ablation;
    use mpi_lgd::geometry::{Camera, View};
    use mpi_lgd::gradients::gradient_components;
    use mpi_lgd::image::{Image, Rect};
    use mpi_lgd::lgd::{init_from_psv, lgd_solve, update_step, SolverConfig};
    use mpi_lgd::mpi::{make_plane_disparities, MpiGeometry, MpiState};
    use mpi_lgd::network::{NetworkShape, UpdateNetwork};
    use mpi_lgd::tiling::footprint_for_crop;
    use nalgebra::{Matrix3, Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn shape() -> NetworkShape {
        NetworkShape {
            hidden: 6,
            encoder_layers: 1,
            stages: 1,
            stage_layers: 1,
            joint_layers: 1,
        }
    }

    pub fn random_camera(rng: &mut impl Rng, size: usize, base: [f64; 3]) -> Camera {
        let r = *Rotation3::from_euler_angles(rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04)).matrix();
        let center = Vector3::new(
            base[0] + rng.gen_range(-0.1..0.1),
            base[1] + rng.gen_range(-0.1..0.1),
            base[2] + rng.gen_range(-0.05..0.05),
        );
        let f = size as f64;
        let k = Matrix3::new(f, 0.0, (size as f64 - 1.0) / 2.0, 0.0, f, (size as f64 - 1.0) / 2.0, 0.0, 0.0, 1.0);
        Camera::new(k, r, -(r * center), size, size).unwrap()
    }

    pub struct Instance {
        pub views: Vec<View>,
        pub geometry: MpiGeometry,
        pub weights: UpdateNetwork,
        pub target: Camera,
        pub crop: Rect,
    }

    pub fn instance(seed: u64, size: usize, planes: usize, iterations: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<View> = [[-0.2, 0.0, 0.0], [0.2, 0.05, 0.0]]
            .iter()
            .map(|b| {
                let cam = random_camera(&mut rng, size, *b);
                let img = Image::from_fn(size, size, 3, |_, _, _| rng.gen_range(0.0..1.0));
                View::new(cam, img).unwrap()
            })
            .collect();
        let reference = Camera::simple(size as f64, size, size, Vector3::zeros()).unwrap();
        let geometry = MpiGeometry::new(reference, make_plane_disparities(1.0, 10.0, planes).unwrap()).unwrap();
        let weights = UpdateNetwork::random(iterations, 2, &shape(), false, &mut rng);
        let target = random_camera(&mut rng, size, [0.0, 0.0, 0.0]);
        let cw = rng.gen_range(2..=6);
        let ch = rng.gen_range(2..=6);
        let x0 = rng.gen_range(0..=size - cw) as i64;
        let y0 = rng.gen_range(0..=size - ch) as i64;
        Instance {
            views,
            geometry,
            weights,
            target,
            crop: Rect::from_size(x0, y0, cw, ch),
        }
    }

    pub fn solver_config(iterations: usize) -> SolverConfig {
        SolverConfig {
            iterations,
            extra_channels: 2,
            ..SolverConfig::default()
        }
    }

    fn crop_render(inst: &Instance, views: &[View]) -> Image {
        let mpi = lgd_solve(views, &inst.geometry, &solver_config(inst.weights.len()), Some(&inst.weights)).unwrap();
        render(&mpi, &inst.target).unwrap().crop(inst.crop)
    }

    /// Scrambles every input pixel outside the footprint (16x16 instance)
    /// and compares target crops. Returns (unchanged, partial footprints).
    pub fn view_pixels_sound(seed: u64) -> (bool, usize) {
        let inst = instance(seed, 16, 4, 1 + (seed as usize % 3));
        let cams: Vec<&Camera> = inst.views.iter().map(|v| &v.camera).collect();
        let fp = footprint_for_crop(&inst.target, inst.crop, &inst.geometry, &cams, inst.weights.len(), 0).unwrap();
        let reads: Vec<Rect> = (0..inst.views.len())
            .map(|k| fp.view_rects.iter().fold(Rect::EMPTY, |a, level| a.union(&level[k])))
            .collect();
        let partial = reads.iter().filter(|r| r.area() < 256).count();
        let before = crop_render(&inst, &inst.views);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let perturbed: Vec<View> = inst
            .views
            .iter()
            .zip(&reads)
            .map(|(v, r)| {
                let mut img = v.image.clone();
                for y in 0..16 {
                    for x in 0..16 {
                        if !r.contains(x, y) {
                            for c in 0..3 {
                                img.set(x as usize, y as usize, c, rng.gen_range(0.0..1.0));
                            }
                        }
                    }
                }
                View::new(v.camera.clone(), img).unwrap()
            })
            .collect();
        (before == crop_render(&inst, &perturbed), partial)
    }

    /// Same for the MPI state entering the one update of an N=2 solve.
    pub fn state_pixels_sound(seed: u64) -> (bool, usize) {
        let inst = instance(seed + 50, 16, 4, 2);
        let cams: Vec<&Camera> = inst.views.iter().map(|v| &v.camera).collect();
        let fp = footprint_for_crop(&inst.target, inst.crop, &inst.geometry, &cams, 2, 0).unwrap();
        let partial = fp.mpi_rects[0].iter().filter(|r| r.area() < 256).count();
        let state = init_from_psv(&inst.views, &inst.geometry, &inst.weights.iterations[0]).unwrap();
        let finish = |s: &MpiState| {
            let mpi = s.to_mpi();
            let comps: Vec<_> = inst.views.iter().map(|v| gradient_components(&mpi, v).unwrap()).collect();
            let next = update_step(s, &comps, &inst.weights.iterations[1], Ablation::FULL).unwrap();
            render(&next.to_mpi(), &inst.target).unwrap().crop(inst.crop)
        };
        let before = finish(&state);
        let mut noisy = state.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (d, raw) in noisy.raw.iter_mut().enumerate() {
            let keep = fp.mpi_rects[0][d];
            let c = raw.channels();
            for y in 0..16 {
                for x in 0..16 {
                    if !keep.contains(x, y) {
                        for ch in 0..c {
                            raw.set(x as usize, y as usize, ch, rng.gen_range(-3.0..3.0));
                        }
                    }
                }
            }
        }
        (before == finish(&noisy), partial)
    }
}

pub mod lateral {
    use mpi_lgd::geometry::{Camera, View};
    use mpi_lgd::image::Image;
    use mpi_lgd::lgd::{lgd_solve, SolverConfig};
    use mpi_lgd::mpi::Mpi;
    use mpi_lgd::network::{NetworkShape, UpdateNetwork};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn weights(seed: u64) -> UpdateNetwork {
        let shape = NetworkShape {
            hidden: 8,
            encoder_layers: 2,
            stages: 1,
            stage_layers: 1,
            joint_layers: 1,
        };
        UpdateNetwork::random(3, 2, &shape, false, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn config(planes: usize) -> SolverConfig {
        SolverConfig {
            iterations: 3,
            planes,
            near: 1.0,
            far: 10.0,
            extra_channels: 2,
            ..SolverConfig::default()
        }
    }

    fn smooth_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        let phases: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..6.0)).collect();
        Image::from_fn(w, h, 3, |x, y, c| {
            0.5 + 0.2 * (0.3 * x as f64 + phases[c]).sin() + 0.2 * (0.25 * y as f64 + phases[c + 3]).cos()
        })
    }

    /// Views on a horizontal baseline (0.05 spacing) with a fixed reference camera.
    pub fn views(seed: u64, size: usize, focal: f64, k: usize) -> (Vec<View>, Camera) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views = (0..k)
            .map(|i| {
                let cam = Camera::simple(focal, size, size, Vector3::new(0.05 * i as f64 - 0.05, 0.02 * (i % 2) as f64, 0.0)).unwrap();
                View::new(cam, smooth_image(&mut rng, size, size)).unwrap()
            })
            .collect();
        (views, Camera::simple(focal, size, size, Vector3::zeros()).unwrap())
    }

    pub fn solve_with(views: &[View], reference: &Camera, planes: usize, w: &UpdateNetwork) -> Mpi {
        let c = config(planes);
        lgd_solve(views, &c.geometry(reference.clone()).unwrap(), &c, Some(w)).unwrap()
    }

    /// Solves `views` and a copy shifted by (dx, dy) pixels at 32x32, D=8,
    /// and returns the largest interior mismatch and the pixels compared.
    pub fn translation_mismatch(seed: u64, w: &UpdateNetwork, dx: usize, dy: usize) -> (f64, usize) {
        let (views, reference) = self::views(seed, 32, 32.0, 2);
        let shifted: Vec<View> = views
            .iter()
            .map(|v| {
                let img = Image::from_fn(32, 32, 3, |x, y, c| {
                    if x >= dx && y >= dy { v.image.get(x - dx, y - dy, c) } else { 0.0 }
                });
                View::new(v.camera.clone(), img).unwrap()
            })
            .collect();
        let a = solve_with(&views, &reference, 8, w);
        let b = solve_with(&shifted, &reference, 8, w);
        // Largest plane shift: focal * baseline * max disparity, plus the
        // footprint growth of two rendering updates.
        let margin = (32.0 * 0.05 * a.planes().last().unwrap().disparity).ceil() as usize * 3 + 4;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (pa, pb) in a.planes().iter().zip(b.planes()) {
            for y in margin..32 - margin {
                for x in margin..32 - margin {
                    if x + dx >= 32 - margin || y + dy >= 32 - margin {
                        continue;
                    }
                    for c in 0..4 {
                        worst = worst.max((pa.rgba.get(x, y, c) - pb.rgba.get(x + dx, y + dy, c)).abs());
                    }
                    checked += 1;
                }
            }
        }
        (worst, checked)
    }
}

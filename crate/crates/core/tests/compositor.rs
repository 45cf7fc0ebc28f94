use mpi_lgd::compositor::{accumulated_over, composite, net_transmittance, over_composite, render, WarpedVolume};
use mpi_lgd::geometry::Camera;
use mpi_lgd::gradcheck::random_plane;
use mpi_lgd::image::Image;
use mpi_lgd::mpi::{Mpi, MpiPlane};
use mpi_lgd::scene::{render_scene_view, SceneRect, SyntheticScene, Texture};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(seed: u64, d: usize, w: usize, h: usize) -> WarpedVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    WarpedVolume::new((0..d).map(|_| random_plane(w, h, &mut rng)).collect()).unwrap()
}

/// Left fold of `c_front + (1 - a_front) c_back`, back to front.
fn pairwise_over(vol: &WarpedVolume) -> Image {
    let (w, h) = (vol.planes[0].width(), vol.planes[0].height());
    let mut out = Image::zeros(w, h, 3);
    for p in &vol.planes {
        for y in 0..h {
            for x in 0..w {
                let px = p.pixel(x, y);
                for c in 0..3 {
                    let back = out.get(x, y, c);
                    out.set(x, y, c, px[c] + (1.0 - px[3]) * back);
                }
            }
        }
    }
    out
}

#[test]
fn over_matches_pairwise_fold() {
    for seed in 0..200 {
        let vol = random_volume(seed, 1 + (seed as usize % 8), 5, 4);
        assert!(over_composite(&vol).max_abs_diff(&pairwise_over(&vol)) < 1e-12);
    }
}

#[test]
fn transmittance_matches_cumulative_product() {
    let vol = random_volume(3, 6, 4, 4);
    let t = net_transmittance(&vol);
    for d in 0..6 {
        for (i, v) in t[d].data().iter().enumerate() {
            let prod: f64 = vol.planes[d + 1..].iter().map(|p| 1.0 - p.data()[i * 4 + 3]).product();
            assert!((v - prod).abs() < 1e-12);
        }
    }
}

#[test]
fn accumulated_recurrence_and_virtual_plane() {
    let vol = random_volume(4, 5, 4, 3);
    let a = accumulated_over(&vol);
    let o = over_composite(&vol);
    for d in 0..5 {
        let next = if d + 1 < 5 { a[d + 1].clone() } else { o.clone() };
        for (i, n) in next.data().iter().enumerate() {
            let (p, c) = (i / 3, i % 3);
            let px = &vol.planes[d].data()[p * 4..p * 4 + 4];
            assert!((px[c] + (1.0 - px[3]) * a[d].data()[i] - n).abs() < 1e-12);
        }
    }
}

#[test]
fn one_sweep_equals_independent_definitions() {
    let vol = random_volume(5, 4, 3, 3);
    let res = composite(&vol.refs());
    assert_eq!(res.color, over_composite(&vol));
    assert_eq!(res.transmittance, net_transmittance(&vol));
    assert_eq!(res.accumulated, accumulated_over(&vol));
}

#[test]
fn two_plane_scene_matches_ray_marcher() {
    let reference = Camera::simple(40.0, 48, 48, Vector3::zeros()).unwrap();
    let target = Camera::simple(40.0, 48, 48, Vector3::new(0.06, -0.04, 0.0)).unwrap();
    let tex_back = Texture::Waves {
        base: [0.5, 0.4, 0.6],
        waves: vec![[[0.6, 0.4, 0.0, 0.15], [0.3, -0.5, 1.0, 0.15], [-0.4, 0.2, 2.0, 0.15]]],
    };
    let tex_front = Texture::Waves {
        base: [0.3, 0.6, 0.4],
        waves: vec![[[0.8, 0.0, 0.5, 0.1], [0.0, 0.7, 0.1, 0.1], [0.5, 0.5, 0.3, 0.1]]],
    };
    let back = SceneRect::fronto(Vector3::new(0.0, 0.0, 6.0), 20.0, 20.0, tex_back);
    let mut front = SceneRect::fronto(Vector3::new(0.0, 0.0, 2.0), 6.0, 6.0, tex_front);
    front.opacity = 0.6;
    let scene = SyntheticScene {
        seed: 0,
        rects: vec![back, front],
        background: [0.0; 3],
    };
    // MPI planes sampled from the scene at the reference camera.
    let planes = [(6.0, 0), (2.0, 1)]
        .iter()
        .map(|&(depth, i)| {
            let single = SyntheticScene {
                rects: vec![scene.rects[i].clone()],
                ..scene.clone()
            };
            let color = render_scene_view(&single, &reference);
            let a = scene.rects[i].opacity;
            MpiPlane {
                disparity: 1.0 / depth,
                rgba: Image::from_fn(48, 48, 4, |x, y, c| if c == 3 { a } else { color.get(x, y, c) }),
            }
        })
        .collect();
    let mpi = Mpi::new(reference, planes).unwrap();
    let rendered = render(&mpi, &target).unwrap();
    let truth = render_scene_view(&scene, &target);
    let inner = mpi_lgd::image::Rect::new(4, 4, 44, 44);
    let rms = rendered.crop(inner).rms_diff(&truth.crop(inner));
    assert!(rms < 2e-3, "{rms}");
}

proptest! {
    #[test]
    fn binary_alpha_is_z_buffering(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes: Vec<Image> = (0..4).map(|_| Image::from_fn(3, 3, 4, |_, _, _| 0.0)).map(|mut p| {
            for px in p.data_mut().chunks_exact_mut(4) {
                let a = if rng.gen_bool(0.4) { 1.0 } else { 0.0 };
                for c in 0..3 { px[c] = a * rng.gen_range(0.0..1.0); }
                px[3] = a;
            }
            p
        }).collect();
        let vol = WarpedVolume::new(planes.clone()).unwrap();
        let o = over_composite(&vol);
        for pix in 0..9 {
            let front = (0..4).rev().find(|&d| planes[d].data()[pix * 4 + 3] == 1.0);
            for c in 0..3 {
                let expected = front.map_or(0.0, |d| planes[d].data()[pix * 4 + c]);
                prop_assert_eq!(o.data()[pix * 3 + c], expected);
            }
        }
    }

    #[test]
    fn output_is_bounded(seed in 0u64..500) {
        let vol = random_volume(seed, 6, 3, 3);
        let o = over_composite(&vol);
        for (i, v) in o.data().iter().enumerate() {
            let (p, c) = (i / 3, i % 3);
            let sum: f64 = vol.planes.iter().map(|pl| pl.data()[p * 4 + c]).sum();
            prop_assert!(*v >= 0.0 && *v <= sum + 1e-12);
        }
    }

    #[test]
    fn transmittance_grows_toward_the_front(seed in 0u64..500) {
        let t = net_transmittance(&random_volume(seed, 5, 2, 2));
        for d in 0..4 {
            for (a, b) in t[d].data().iter().zip(t[d + 1].data()) {
                prop_assert!(a <= b);
            }
        }
    }
}

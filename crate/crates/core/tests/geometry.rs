use mpi_lgd::geometry::{
    plane_homography, plane_induced_homography, resample, resample_adjoint, warp_image, warp_mpi_to_view,
    inverse_warp_volume, Camera, Homography,
};
use mpi_lgd::image::{Image, Patch, Rect};
use mpi_lgd::mpi::{Mpi, MpiPlane};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera_with(k: Matrix3<f64>, rotation: Matrix3<f64>, center: Vector3<f64>, size: usize) -> Camera {
    Camera::new(k, rotation, -(rotation * center), size, size).unwrap()
}

fn intrinsics(f: f64, c: f64) -> Matrix3<f64> {
    Matrix3::new(f, 0.0, c, 0.0, f, c, 0.0, 0.0, 1.0)
}

/// Least-squares-free 4-point DLT with `h33 = 1`.
fn dlt(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Matrix3<f64> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let (x, y) = src[i];
        let (u, v) = dst[i];
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a.lu().solve(&b).unwrap();
    Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0)
}

#[test]
fn lateral_shift_matches_dlt_oracle() {
    let k = intrinsics(100.0, 32.0);
    let reference = camera_with(k, Matrix3::identity(), Vector3::zeros(), 64);
    let target = camera_with(k, Matrix3::identity(), Vector3::new(0.1, 0.0, 0.0), 64);
    let depth = 2.0;
    let corners = [(3.0, 5.0), (60.0, 2.0), (58.0, 61.0), (1.0, 55.0)];
    let projected: Vec<(f64, f64)> = corners
        .iter()
        .map(|&(x, y)| {
            let (o, d) = reference.ray(x, y);
            let world = o + d * ((depth - o.z) / d.z);
            target.project(&world).unwrap()
        })
        .collect();
    let oracle = dlt(&corners, &projected);
    let h = plane_homography(&reference, &target, depth).unwrap().normalized();
    for (a, b) in h.iter().zip(oracle.iter()) {
        assert!((a - b).abs() < 1e-6, "{h} vs {oracle}");
    }
}

fn rotation(ax: f64, ay: f64, az: f64) -> Matrix3<f64> {
    *nalgebra::Rotation3::from_euler_angles(ax, ay, az).matrix()
}

/// The plane `n . X = 1/inv` of `from`'s frame, expressed for camera `to`.
fn transfer_plane(from: &Camera, to: &Camera, n: Vector3<f64>, inv: f64) -> (Vector3<f64>, f64) {
    // X_from = R_rel X_to + t_rel where (R_rel, t_rel) maps to -> from.
    let (r, t) = from.relative_to(to);
    let n_to = r.transpose() * n;
    let offset = 1.0 / inv - n.dot(&t);
    (n_to, 1.0 / offset)
}

#[test]
fn homographies_of_one_world_plane_compose() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let k = intrinsics(60.0, 24.0);
    for _ in 0..50 {
        let mut cam = || {
            camera_with(
                k,
                rotation(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)),
                Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2)),
                48,
            )
        };
        let (a, b, c) = (cam(), cam(), cam());
        let n = Vector3::z();
        let inv = rng.gen_range(0.2..0.8);
        let ac = plane_induced_homography(&a, &c, &n, inv).unwrap();
        let ab = plane_induced_homography(&a, &b, &n, inv).unwrap();
        let (nb, invb) = transfer_plane(&a, &b, n, inv);
        let bc = plane_induced_homography(&b, &c, &nb, invb).unwrap();
        let composed = bc.compose(&ab).normalized();
        for (x, y) in ac.normalized().iter().zip(composed.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn lateral_triples_compose_with_reference_planes() {
    // Cameras on one z = 0 plane share every fronto-parallel plane.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let mut cam = || Camera::simple(50.0, 32, 32, Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0)).unwrap();
        let (a, b, c) = (cam(), cam(), cam());
        let depth = rng.gen_range(1.0..20.0);
        let lhs = plane_homography(&a, &c, depth).unwrap().normalized();
        let rhs = plane_homography(&b, &c, depth).unwrap().compose(&plane_homography(&a, &b, depth).unwrap()).normalized();
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

/// Scalar bilinear sampler written independently of the library.
fn reference_warp(src: &Image, h: &Matrix3<f64>, w: usize, hgt: usize) -> Image {
    let inv = h.try_inverse().unwrap();
    let mut out = Image::zeros(w, hgt, src.channels());
    for y in 0..hgt {
        for x in 0..w {
            let p = inv * Vector3::new(x as f64, y as f64, 1.0);
            if p.z <= 0.0 {
                continue;
            }
            let (sx, sy) = (p.x / p.z, p.y / p.z);
            for c in 0..src.channels() {
                let mut v = 0.0;
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let tx = sx.floor() as i64 + dx;
                    let ty = sy.floor() as i64 + dy;
                    let wx = if dx == 0 { 1.0 - (sx - sx.floor()) } else { sx - sx.floor() };
                    let wy = if dy == 0 { 1.0 - (sy - sy.floor()) } else { sy - sy.floor() };
                    if tx >= 0 && ty >= 0 && (tx as usize) < src.width() && (ty as usize) < src.height() {
                        v += wx * wy * src.get(tx as usize, ty as usize, c);
                    }
                }
                out.set(x, y, c, v);
            }
        }
    }
    out
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_fn(w, h, c, |_, _, _| rng.gen_range(0.0..1.0))
}

#[test]
fn warp_matches_scalar_sampler() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let src = random_image(&mut rng, 8, 8, 3);
        let m = Matrix3::new(
            1.0 + rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-0.1..0.1),
            1.0 + rng.gen_range(-0.1..0.1),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-0.01..0.01),
            rng.gen_range(-0.01..0.01),
            1.0,
        );
        let got = warp_image(&src, &Homography::new(m).unwrap(), 8, 8).unwrap();
        assert!(got.max_abs_diff(&reference_warp(&src, &m, 8, 8)) < 1e-6);
    }
}

#[test]
fn adjoint_satisfies_inner_product_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let m = Matrix3::new(0.95, 0.05, 0.7, -0.03, 1.02, -0.4, 0.002, -0.001, 1.0);
        let src = Patch::full(random_image(&mut rng, 9, 7, 2));
        let dst_rect = Rect::new(-1, 0, 8, 8);
        let y = Patch {
            rect: dst_rect,
            image: random_image(&mut rng, 9, 8, 2),
        };
        let ax = resample(&src, &m, dst_rect);
        let aty = resample_adjoint(&y, &m, src.rect);
        let lhs: f64 = ax.image.data().iter().zip(y.image.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = src.image.data().iter().zip(aty.image.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}

#[test]
fn constant_planes_survive_the_round_trip_inside_the_mask() {
    let reference = Camera::simple(20.0, 16, 16, Vector3::zeros()).unwrap();
    let target = Camera::simple(20.0, 16, 16, Vector3::new(0.07, -0.04, 0.02)).unwrap();
    let values = [0.2, 0.4, 0.6, 0.8];
    let planes = values
        .iter()
        .enumerate()
        .map(|(d, &v)| MpiPlane {
            disparity: 0.1 + 0.2 * d as f64,
            rgba: Image::from_fn(16, 16, 4, |_, _, c| if c == 3 { v } else { v * 0.5 }),
        })
        .collect();
    let mpi = Mpi::new(reference.clone(), planes).unwrap();
    let warped = warp_mpi_to_view(&mpi, &target).unwrap();
    let ones = Mpi::new(
        reference,
        mpi.planes()
            .iter()
            .map(|p| MpiPlane {
                disparity: p.disparity,
                rgba: Image::filled(16, 16, 4, 1.0),
            })
            .collect(),
    )
    .unwrap();
    let mask_fwd = warp_mpi_to_view(&ones, &target).unwrap();
    let back = inverse_warp_volume(&warped.planes, &target, &mpi.geometry()).unwrap();
    let mask = inverse_warp_volume(&mask_fwd.planes, &target, &mpi.geometry()).unwrap();
    for d in 0..4 {
        for (i, (b, m)) in back[d].data().iter().zip(mask[d].data()).enumerate() {
            if (*m - 1.0).abs() < 1e-12 {
                assert!((b - mpi.planes()[d].rgba.data()[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn smooth_round_trip_blur_is_small() {
    let reference = Camera::simple(32.0, 32, 32, Vector3::zeros()).unwrap();
    let target = Camera::simple(32.0, 32, 32, Vector3::new(0.05, 0.03, 0.0)).unwrap();
    let img = Image::from_fn(32, 32, 4, |x, y, c| {
        let v = 0.5 + 0.3 * ((x as f64) * 0.2 + c as f64).sin() * ((y as f64) * 0.15).cos();
        if c == 3 { 1.0 } else { v }
    });
    let h = plane_homography(&reference, &target, 3.0).unwrap();
    let fwd = resample(&Patch::full(img.clone()), h.inverse_matrix(), target.image_rect());
    let back = resample(&fwd, h.matrix(), reference.image_rect()).image;
    // inside region where the round trip stays in the image
    let inner = Rect::new(4, 4, 28, 28);
    let rms = img.crop(inner).rms_diff(&back.crop(inner));
    assert!(rms < 0.02, "{rms}");
}

proptest! {
    #[test]
    fn warp_is_linear(seed in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_image(&mut rng, 6, 5, 3);
        let b = random_image(&mut rng, 6, 5, 3);
        let h = Homography::new(Matrix3::new(1.03, 0.02, 0.4, -0.01, 0.98, -0.6, 0.001, 0.002, 1.0)).unwrap();
        let mix = Image::from_fn(6, 5, 3, |x, y, c| alpha * a.get(x, y, c) + beta * b.get(x, y, c));
        let wm = warp_image(&mix, &h, 6, 5).unwrap();
        let wa = warp_image(&a, &h, 6, 5).unwrap();
        let wb = warp_image(&b, &h, 6, 5).unwrap();
        for i in 0..wm.data().len() {
            let expected = alpha * wa.data()[i] + beta * wb.data()[i];
            prop_assert!((wm.data()[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn warped_ones_are_in_unit_range(tx in -3.0f64..3.0, ty in -3.0f64..3.0, s in 0.8f64..1.2) {
        let h = Homography::new(Matrix3::new(s, 0.0, tx, 0.0, s, ty, 0.0, 0.0, 1.0)).unwrap();
        let out = warp_image(&Image::filled(7, 7, 1, 1.0), &h, 7, 7).unwrap();
        prop_assert!(out.data().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }
}

//! Projection, triangulation and epipolar geometry checked against
//! independently written reference computations.

use kptk_core::geometry::{
    epipolar_residual, fundamental_matrix, look_at, triangulate_dlt, CameraIntrinsics, GeometryError, ProjectionMatrix, RigidTransform, StereoRig,
};
use nalgebra::{Matrix4, UnitQuaternion, Vector2, Vector3, Vector4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(700.0, 700.0, 640.0, 360.0, 1280, 720).unwrap()
}

/// Pixel of `x` computed through the general 4x4 inverse of the pose.
fn project_oracle(k: &CameraIntrinsics, camera_in_base: &RigidTransform, x: &Vector3<f64>) -> Vector2<f64> {
    let t_cb: Matrix4<f64> = camera_in_base.to_homogeneous().try_inverse().unwrap();
    let c = t_cb * Vector4::new(x.x, x.y, x.z, 1.0);
    Vector2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy)
}

fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> UnitQuaternion<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-6 { Vector3::x() } else { axis.normalize() };
    UnitQuaternion::from_scaled_axis(axis * rng.random_range(-max_angle..max_angle))
}

#[test]
fn projection_matches_homogeneous_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let eye = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..1.0));
        let pose = look_at(&eye, &Vector3::zeros(), &Vector3::z()).unwrap();
        let x = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        let p = ProjectionMatrix::from_camera(&k(), &pose).project(&x).unwrap();
        assert!((p - project_oracle(&k(), &pose, &x)).norm() < 1e-9);
    }
}

fn stereo_views(left: &RigidTransform, baseline: f64) -> (ProjectionMatrix, ProjectionMatrix) {
    let rig = StereoRig::new(k(), k(), RigidTransform::from_quaternion(&UnitQuaternion::identity(), Vector3::new(baseline, 0.0, 0.0))).unwrap();
    (ProjectionMatrix::from_camera(&k(), left), ProjectionMatrix::from_camera(&k(), &rig.right_pose(left)))
}

#[test]
fn noise_free_round_trip() {
    let x = Vector3::new(0.2, -0.1, 0.8);
    let (l, r) = stereo_views(&RigidTransform::identity(), 0.063);
    let est = triangulate_dlt(&[(l, l.project(&x).unwrap()), (r, r.project(&x).unwrap())]).unwrap();
    assert!((est - x).norm() < 1e-9);
}

fn sse(views: &[(ProjectionMatrix, Vector2<f64>)], x: &Vector3<f64>) -> f64 {
    views.iter().map(|(p, obs)| p.project(x).map(|px| (px - obs).norm_squared()).unwrap_or(f64::INFINITY)).sum()
}

/// Grid pattern search of the reprojection error around `start`: recenter on
/// the best grid point until the center wins, then halve the grid step.
fn reprojection_minimizer(views: &[(ProjectionMatrix, Vector2<f64>)], start: Vector3<f64>) -> Vector3<f64> {
    let mut best = start;
    let mut best_cost = sse(views, &best);
    let mut step = 0.003;
    while step > 1e-10 {
        for _ in 0..200 {
            let center = best;
            for a in -5..=5 {
                for b in -5..=5 {
                    for c in -5..=5 {
                        let x = center + Vector3::new(f64::from(a), f64::from(b), f64::from(c)) * step;
                        let cost = sse(views, &x);
                        if cost < best_cost {
                            best_cost = cost;
                            best = x;
                        }
                    }
                }
            }
            if best == center {
                break;
            }
        }
        step /= 2.0;
    }
    best
}

#[test]
fn noisy_dlt_within_twice_the_reprojection_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut dlt_err, mut opt_err) = (0.0, 0.0);
    let trials = 60;
    for _ in 0..trials {
        let x = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.6);
        let (l, r) = stereo_views(&RigidTransform::identity(), 0.06);
        let mut obs = |p: &ProjectionMatrix| p.project(&x).unwrap() + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        let views = [(l, obs(&l)), (r, obs(&r))];
        let est = triangulate_dlt(&views).unwrap();
        let opt = reprojection_minimizer(&views, x);
        assert!(sse(&views, &opt) <= sse(&views, &est) + 1e-9, "grid oracle must not be worse than DLT");
        dlt_err += (est - x).norm();
        opt_err += (opt - x).norm();
    }
    let (dlt_err, opt_err) = (dlt_err / f64::from(trials), opt_err / f64::from(trials));
    assert!(dlt_err <= 2.0 * opt_err, "DLT mean error {dlt_err} vs optimum {opt_err}");
}

#[test]
fn four_views_residual_bounded_by_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..50 {
        let x = Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
        let mut views = Vec::new();
        let mut max_noise: f64 = 0.0;
        for v in 0..4 {
            let a = f64::from(v) * 0.6 + rng.random_range(-0.1..0.1);
            let eye = Vector3::new(0.6 * a.cos(), 0.6 * a.sin(), 0.3);
            let p = ProjectionMatrix::from_camera(&k(), &look_at(&eye, &Vector3::zeros(), &Vector3::z()).unwrap());
            let n = Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            max_noise = max_noise.max(n.norm());
            views.push((p, p.project(&x).unwrap() + n));
        }
        let est = triangulate_dlt(&views).unwrap();
        let rms = (sse(&views, &est) / views.len() as f64).sqrt();
        assert!(rms <= max_noise, "rms residual {rms} > max noise {max_noise}");
    }
}

#[test]
fn degenerate_configurations_are_rejected() {
    let p = ProjectionMatrix::from_camera(&k(), &RigidTransform::identity());
    let obs = Vector2::new(640.0, 360.0);
    assert!(matches!(triangulate_dlt(&[(p, obs), (p, obs)]), Err(GeometryError::DegenerateGeometry(_))));
    assert!(matches!(triangulate_dlt(&[(p, obs)]), Err(GeometryError::TooFewObservations(1))));
}

#[test]
fn epipolar_constraint_on_random_rigs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let kl = CameraIntrinsics::new(rng.random_range(400.0..900.0), rng.random_range(400.0..900.0), rng.random_range(300.0..700.0), rng.random_range(200.0..500.0), 1280, 720).unwrap();
        let kr = CameraIntrinsics::new(rng.random_range(400.0..900.0), rng.random_range(400.0..900.0), rng.random_range(300.0..700.0), rng.random_range(200.0..500.0), 1280, 720).unwrap();
        let t = Vector3::new(rng.random_range(0.03..0.3), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        let rig = StereoRig::new(kl, kr, RigidTransform::from_quaternion(&random_rotation(&mut rng, 0.15), t)).unwrap();
        let f = fundamental_matrix(&rig).unwrap();
        let sv = f.singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        assert!(lo <= 1e-12 * hi, "F must be rank 2");

        let left = RigidTransform::identity();
        let right = rig.right_pose(&left);
        let x = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2), rng.random_range(0.5..2.0));
        let (Ok(pl), Ok(pr)) = (ProjectionMatrix::from_camera(&kl, &left).project(&x), ProjectionMatrix::from_camera(&kr, &right).project(&x)) else {
            continue;
        };
        worst = worst.max(epipolar_residual(&f, &pl, &pr).abs());
        checked += 1;
    }
    assert!(worst < 1e-6, "worst residual {worst}");
}

fn pose_strategy() -> impl Strategy<Value = RigidTransform> {
    (prop::array::uniform3(-3.0f64..3.0), prop::array::uniform3(-2.0f64..2.0))
        .prop_map(|(r, t)| RigidTransform::from_quaternion(&UnitQuaternion::from_scaled_axis(Vector3::from(r)), Vector3::from(t)))
}

fn close(a: &RigidTransform, b: &RigidTransform) -> bool {
    (a.to_homogeneous() - b.to_homogeneous()).abs().max() < 1e-9
}

proptest! {
    #[test]
    fn transforms_form_a_group(a in pose_strategy(), b in pose_strategy(), c in pose_strategy(), p in prop::array::uniform3(-1.0f64..1.0)) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))));
        prop_assert!(close(&a.compose(&a.inverse()), &RigidTransform::identity()));
        prop_assert!(close(&a.compose(&RigidTransform::identity()), &a));
        let p = Vector3::from(p);
        let via_matrix = a.to_homogeneous() * b.to_homogeneous() * Vector4::new(p.x, p.y, p.z, 1.0);
        prop_assert!((a.compose(&b).transform_point(&p) - via_matrix.xyz()).norm() < 1e-9);
    }

    #[test]
    fn triangulation_inverts_projection(pose in pose_strategy(), p in prop::array::uniform3(-0.1f64..0.1), d in 0.3f64..1.5) {
        let x = pose.transform_point(&(Vector3::from(p) + Vector3::new(0.0, 0.0, d)));
        let rig = StereoRig::new(k(), k(), RigidTransform::from_quaternion(&UnitQuaternion::identity(), Vector3::new(0.063, 0.0, 0.0))).unwrap();
        let l = ProjectionMatrix::from_camera(&k(), &pose);
        let r = ProjectionMatrix::from_camera(&k(), &rig.right_pose(&pose));
        let est = triangulate_dlt(&[(l, l.project(&x).unwrap()), (r, r.project(&x).unwrap())]).unwrap();
        prop_assert!((est - x).norm() < 1e-9);
    }
}

//! Synthetic valve and cup scenes observed by a stereo camera on an arc
//! trajectory, producing pose-only sequences with ground-truth labels.

use std::f64::consts::PI;

use nalgebra::{Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::dataset::{frame_keypoints, propagate_labels, Camera, Click, DatasetError, Frame, ObjectInstance, SequenceDataset, Split};
use crate::geometry::{look_at, CameraIntrinsics, ProjectionMatrix, RigidTransform, StereoRig};
use crate::targets::{CategorySpec, RenderParams, TargetMaps};

pub const DEFAULT_FRAME_RATE: f64 = 14.5;
pub const DEFAULT_DURATION: f64 = 30.0;
pub const DEFAULT_BASELINE: f64 = 0.063;
pub const DEFAULT_FOCAL: f64 = 700.0;
pub const MAX_CUPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Valve,
    Cups,
}

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Valve => "valve",
            SceneKind::Cups => "cups",
        }
    }

    pub fn category(self) -> CategorySpec {
        match self {
            SceneKind::Valve => valve_category(),
            SceneKind::Cups => cup_category(),
        }
    }
}

/// Hub plus three indistinguishable spokes sharing one channel.
pub fn valve_category() -> CategorySpec {
    CategorySpec::new("valve", vec!["hub".into(), "spoke".into()], vec![false, true]).expect("valid valve category")
}

pub fn cup_category() -> CategorySpec {
    CategorySpec::new("cup", vec!["bottom".into(), "top".into(), "handle".into()], vec![false, false, false]).expect("valid cup category")
}

/// Perturbations applied on top of the noise-free simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Per-axis Gaussian noise on projected keypoints, full-image pixels.
    pub pixel_sigma: f64,
    /// Per-axis Gaussian noise on camera positions, meters.
    pub pose_translation_sigma: f64,
    /// Gaussian noise on camera orientation, radians about a random axis.
    pub pose_rotation_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub frame_rate: f64,
    pub duration: f64,
    pub intrinsics: CameraIntrinsics,
    pub baseline: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frame_rate: DEFAULT_FRAME_RATE,
            duration: DEFAULT_DURATION,
            intrinsics: CameraIntrinsics::new(DEFAULT_FOCAL, DEFAULT_FOCAL, 640.0, 360.0, 1280, 720).expect("valid default intrinsics"),
            baseline: DEFAULT_BASELINE,
        }
    }
}

impl SimConfig {
    pub fn rig(&self) -> StereoRig {
        let t = RigidTransform::from_rotation(&Rotation3::identity(), Vector3::new(self.baseline, 0.0, 0.0));
        StereoRig::new(self.intrinsics, self.intrinsics, t).expect("valid simulated rig")
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }
}

/// Camera arc around `focus`: azimuth sweeps across `azimuth_span` centered
/// on `azimuth_center` while elevation and distance oscillate within bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orbit {
    pub azimuth_center: f64,
    pub azimuth_span: f64,
    pub elevation: (f64, f64),
    pub distance: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub kind: SceneKind,
    pub category: CategorySpec,
    pub objects: Vec<ObjectInstance>,
    pub focus: Vector3<f64>,
    pub orbit: Orbit,
}

fn unit(azimuth: f64, elevation: f64) -> Vector3<f64> {
    Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin())
}

impl SyntheticScene {
    /// A valve on a vertical mount facing roughly towards the robot.
    pub fn valve<R: Rng>(rng: &mut R) -> Self {
        let focus = Vector3::new(rng.random_range(0.5..0.6), rng.random_range(-0.05..0.05), rng.random_range(0.3..0.4));
        let facing = PI + rng.random_range(-0.3..0.3);
        let normal = unit(facing, 0.0);
        let side = Vector3::z().cross(&normal).normalize();
        let up = normal.cross(&side);
        let radius = rng.random_range(0.07..0.10);
        let standoff = rng.random_range(0.02..0.04);
        let roll = rng.random_range(0.0..2.0 * PI / 3.0);
        let spokes = (0..3)
            .map(|i| {
                let a = roll + f64::from(i) * 2.0 * PI / 3.0;
                focus + normal * standoff + (side * a.cos() + up * a.sin()) * radius
            })
            .collect();
        let valve = ObjectInstance { category: "valve".into(), keypoints: vec![vec![focus], spokes] };
        Self {
            kind: SceneKind::Valve,
            category: valve_category(),
            objects: vec![valve],
            focus,
            orbit: Orbit { azimuth_center: facing, azimuth_span: 100f64.to_radians(), elevation: (-0.1, 0.6), distance: (0.5, 0.8) },
        }
    }

    /// One to four upright cups on a table, non-overlapping.
    pub fn cups<R: Rng>(rng: &mut R, count: usize) -> Self {
        let count = count.clamp(1, MAX_CUPS);
        let focus = Vector3::new(rng.random_range(0.5..0.6), rng.random_range(-0.05..0.05), 0.0);
        let mut bases: Vec<Vector3<f64>> = Vec::with_capacity(count);
        while bases.len() < count {
            let r = 0.13 * rng.random::<f64>().sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            let p = focus + Vector3::new(r * a.cos(), r * a.sin(), 0.0);
            if bases.iter().all(|b| (b - p).norm() > 0.11) {
                bases.push(p);
            }
        }
        let objects = bases
            .iter()
            .map(|b| {
                let height = rng.random_range(0.08..0.12);
                let radius = rng.random_range(0.035..0.045);
                let yaw = rng.random_range(0.0..2.0 * PI);
                let handle = b + unit(yaw, 0.0) * (radius + 0.025) + Vector3::z() * (0.55 * height);
                ObjectInstance { category: "cup".into(), keypoints: vec![vec![*b], vec![b + Vector3::z() * height], vec![handle]] }
            })
            .collect();
        let focus = focus + Vector3::z() * 0.05;
        Self {
            kind: SceneKind::Cups,
            category: cup_category(),
            objects,
            focus,
            orbit: Orbit { azimuth_center: PI + rng.random_range(-0.3..0.3), azimuth_span: 300f64.to_radians(), elevation: (0.5, 1.1), distance: (0.5, 0.75) },
        }
    }

    pub fn random<R: Rng>(kind: SceneKind, rng: &mut R) -> Self {
        match kind {
            SceneKind::Valve => Self::valve(rng),
            SceneKind::Cups => {
                let n = rng.random_range(1..=MAX_CUPS);
                Self::cups(rng, n)
            }
        }
    }
}

/// Left camera poses along the scene's orbit, one per frame.
pub fn trajectory<R: Rng>(scene: &SyntheticScene, frames: usize, rng: &mut R) -> Vec<RigidTransform> {
    let o = scene.orbit;
    let phase: [f64; 4] = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let reverse = rng.random::<bool>();
    (0..frames)
        .map(|i| {
            let mut u = if frames > 1 { i as f64 / (frames - 1) as f64 } else { 0.5 };
            if reverse {
                u = 1.0 - u;
            }
            let azimuth = o.azimuth_center + o.azimuth_span * (u - 0.5) + 0.05 * (2.0 * PI * 3.0 * u + phase[0]).sin();
            let elevation = o.elevation.0 + (o.elevation.1 - o.elevation.0) * (0.5 + 0.5 * (2.0 * PI * 2.0 * u + phase[1]).sin());
            let distance = o.distance.0 + (o.distance.1 - o.distance.0) * (0.5 + 0.5 * (2.0 * PI * 1.5 * u + phase[2]).sin());
            let wobble = Vector3::new((2.0 * PI * 2.5 * u + phase[3]).sin(), (2.0 * PI * 1.7 * u + phase[3]).cos(), 0.0) * 0.02;
            let target = scene.focus + wobble;
            let eye = scene.focus + unit(azimuth, elevation) * distance;
            look_at(&eye, &target, &Vector3::z()).expect("orbit never looks straight down")
        })
        .collect()
}

/// Seeded generator for sequence `index` of a corpus.
pub fn sequence_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A pose-only sequence observing `scene`, with the scene objects as labels.
pub fn simulate_sequence<R: Rng>(scene: &SyntheticScene, config: &SimConfig, id: &str, split: Split, rng: &mut R) -> SequenceDataset {
    let rig = config.rig();
    let frames = trajectory(scene, config.frame_count(), rng)
        .into_iter()
        .enumerate()
        .map(|(i, left)| Frame {
            timestamp: i as f64 / config.frame_rate,
            left_pose: left,
            right_pose: rig.right_pose(&left),
            left_image: None,
            right_image: None,
        })
        .collect();
    SequenceDataset {
        id: id.to_string(),
        split,
        calibration: Calibration { rig, hand_eye: RigidTransform::identity() },
        frames,
        categories: vec![scene.category.clone()],
        labels: scene.objects.clone(),
    }
}

/// `n_train` training and `n_test` test sequences of random scenes.
pub fn simulate_corpus(kind: SceneKind, n_train: usize, n_test: usize, config: &SimConfig, seed: u64) -> Vec<SequenceDataset> {
    (0..n_train + n_test)
        .into_par_iter()
        .map(|i| {
            let mut rng = sequence_rng(seed, i as u64);
            let scene = SyntheticScene::random(kind, &mut rng);
            let split = if i < n_train { Split::Train } else { Split::Test };
            simulate_sequence(&scene, config, &format!("{}-{i:03}", kind.name()), split, &mut rng)
        })
        .collect()
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

/// Pose with Gaussian position noise and a random small rotation.
pub fn perturb_pose<R: Rng>(pose: &RigidTransform, noise: &NoiseModel, rng: &mut R) -> RigidTransform {
    let dt = Vector3::new(gaussian(rng, noise.pose_translation_sigma), gaussian(rng, noise.pose_translation_sigma), gaussian(rng, noise.pose_translation_sigma));
    let axis = Vector3::new(gaussian(rng, 1.0), gaussian(rng, 1.0), gaussian(rng, 1.0));
    let angle = gaussian(rng, noise.pose_rotation_sigma);
    let dr = nalgebra::Unit::try_new(axis, 1e-12).map(|a| UnitQuaternion::from_axis_angle(&a, angle)).unwrap_or_else(UnitQuaternion::identity);
    RigidTransform::from_quaternion(&(dr * pose.quaternion()), pose.translation() + dt)
}

/// Target maps of one camera image with keypoint positions jittered by the
/// model's pixel noise before rendering.
pub fn noisy_targets<R: Rng>(
    seq: &SequenceDataset,
    frame: usize,
    camera: Camera,
    render: &RenderParams,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<TargetMaps, DatasetError> {
    let spec = &seq.categories[0];
    let mut proj = frame_keypoints(seq, spec, frame, camera)?;
    let scale = proj.mapping.scale();
    for channel in &mut proj.keypoints {
        for k in channel.iter_mut() {
            k.position += Vector2::new(gaussian(rng, noise.pixel_sigma) * scale.x, gaussian(rng, noise.pixel_sigma) * scale.y);
        }
    }
    proj.render(spec, frame, render)
}

/// Outcome of propagating one object's labels from noisy clicks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftReport {
    pub frame_a: usize,
    pub frame_b: usize,
    /// Mean distance between propagated and true 2D labels, pixels.
    pub mean_px: f64,
    /// Number of (frame, camera, keypoint) samples averaged.
    pub samples: usize,
    /// Mean 3D error of the triangulated keypoints, meters.
    pub mean_3d: f64,
}

/// Clicks every keypoint of `object` in the best labeling pair with
/// `click_sigma` pixels of noise per axis, propagates, and measures drift of
/// the derived labels against the true projections in every frame where
/// the keypoint is visible in the image.
pub fn label_drift<R: Rng>(seq: &SequenceDataset, object: usize, click_sigma: f64, noise: &NoiseModel, rng: &mut R) -> Result<DriftReport, DatasetError> {
    let pair = crate::dataset::select_label_views(seq)?;
    let truth = &seq.labels[object];
    let k = *seq.intrinsics(Camera::Left);
    // Clicks are placed on images captured at the true poses; the labeling
    // tool only knows the recorded (possibly perturbed) poses.
    let true_proj = |f: usize| ProjectionMatrix::from_camera(&k, &seq.frames[f].left_pose);
    let (pa, pb) = (true_proj(pair.a), true_proj(pair.b));
    let mut recorded = seq.clone();
    for f in &mut recorded.frames {
        f.left_pose = perturb_pose(&f.left_pose, noise, rng);
        f.right_pose = recorded.calibration.rig.right_pose(&f.left_pose);
    }

    let mut clicks = Vec::new();
    for (channel, pts) in truth.keypoints.iter().enumerate() {
        for x in pts {
            let jitter = |rng: &mut R| Vector2::new(gaussian(rng, click_sigma), gaussian(rng, click_sigma));
            let a = pa.project(x).map_err(|_| DatasetError::FrameOutOfRange(pair.a))? + jitter(rng);
            let b = pb.project(x).map_err(|_| DatasetError::FrameOutOfRange(pair.b))? + jitter(rng);
            clicks.push(Click { channel, a, b });
        }
    }
    let prop = propagate_labels(&recorded, &truth.category, pair.a, pair.b, &clicks)?;

    let truth_points: Vec<Vector3<f64>> = truth.keypoints.iter().flatten().copied().collect();
    let estimated: Vec<Vector3<f64>> = prop.instance.keypoints.iter().flatten().copied().collect();
    let mean_3d = truth_points.iter().zip(&estimated).map(|(t, e)| (t - e).norm()).sum::<f64>() / truth_points.len() as f64;

    let (mut sum, mut samples) = (0.0, 0usize);
    for (f, labels) in prop.frames.iter().enumerate() {
        for (camera, derived) in [(Camera::Left, &labels.left), (Camera::Right, &labels.right)] {
            let p = ProjectionMatrix::from_camera(seq.intrinsics(camera), seq.frames[f].pose(camera));
            for (x, l) in truth_points.iter().zip(derived.iter()) {
                let (Ok(t), Some(d)) = (p.project(x), l.position) else { continue };
                if l.visible && seq.intrinsics(camera).contains(&t) {
                    sum += (t - d).norm();
                    samples += 1;
                }
            }
        }
    }
    Ok(DriftReport { frame_a: pair.a, frame_b: pair.b, mean_px: if samples > 0 { sum / samples as f64 } else { 0.0 }, samples, mean_3d })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sequence_length() {
        assert_eq!(SimConfig::default().frame_count(), 435);
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = SimConfig { duration: 2.0, ..SimConfig::default() };
        let a = simulate_corpus(SceneKind::Cups, 2, 1, &cfg, 7);
        let b = simulate_corpus(SceneKind::Cups, 2, 1, &cfg, 7);
        assert_eq!(a, b);
        let c = simulate_corpus(SceneKind::Cups, 2, 1, &cfg, 8);
        assert_ne!(a, c);
        assert_eq!(a[2].split, Split::Test);
    }

    #[test]
    fn valve_has_four_keypoints_in_depth_range() {
        let cfg = SimConfig::default();
        for s in 0..5 {
            let mut rng = sequence_rng(3, s);
            let scene = SyntheticScene::valve(&mut rng);
            assert_eq!(scene.objects[0].keypoint_count(), 4);
            let seq = simulate_sequence(&scene, &cfg, "v", Split::Test, &mut rng);
            for f in &seq.frames {
                let to_cam = f.left_pose.inverse();
                for x in scene.objects[0].keypoints.iter().flatten() {
                    let z = to_cam.transform_point(x).z;
                    assert!((0.4..=1.0).contains(&z), "depth {z}");
                }
            }
        }
    }

    #[test]
    fn cups_do_not_overlap() {
        let mut rng = sequence_rng(1, 0);
        for n in 1..=4 {
            let scene = SyntheticScene::cups(&mut rng, n);
            assert_eq!(scene.objects.len(), n);
            for (i, a) in scene.objects.iter().enumerate() {
                assert_eq!(a.keypoint_count(), 3);
                for b in &scene.objects[i + 1..] {
                    assert!((a.keypoints[0][0] - b.keypoints[0][0]).norm() > 0.11);
                }
            }
        }
    }

    #[test]
    fn perturbation_is_identity_without_noise() {
        let mut rng = sequence_rng(0, 0);
        let p = look_at(&Vector3::new(0.3, 0.2, 0.5), &Vector3::zeros(), &Vector3::z()).unwrap();
        let q = perturb_pose(&p, &NoiseModel::default(), &mut rng);
        assert!((p.to_homogeneous() - q.to_homogeneous()).abs().max() < 1e-15);
    }
}

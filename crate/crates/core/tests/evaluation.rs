//! Metrics on hand-built predictions, noise sensitivity and stage timing.

use kptk_core::dataset::{Camera, SequenceDataset, Split};
use kptk_core::eval::{bench_stages, gt_stereo_inputs, track_stereo, visible_in_crop, EvalError, Evaluator, FramePrediction, StereoInput};
use kptk_core::extraction::FrameMaps;
use kptk_core::sim::{noisy_targets, sequence_rng, simulate_sequence, NoiseModel, SimConfig, SyntheticScene};
use kptk_core::stereo::{Keypoint3D, Provenance, StereoPoses, TrackedObject3D, TrackingParams};
use kptk_core::targets::{FrameMapping, RenderParams};
use nalgebra::Vector3;
use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn valve(seed: u64, duration: f64) -> SequenceDataset {
    let mut rng = sequence_rng(seed, 0);
    let scene = SyntheticScene::valve(&mut rng);
    simulate_sequence(&scene, &SimConfig { duration, ..SimConfig::default() }, "valve", Split::Test, &mut rng)
}

fn fully_visible_frame(seq: &SequenceDataset) -> usize {
    (0..seq.frames.len())
        .find(|&f| seq.labels[0].channel_points().iter().all(|(_, x)| visible_in_crop(seq, f, Camera::Left, x) && visible_in_crop(seq, f, Camera::Right, x)))
        .expect("a fully visible frame")
}

fn object(points: Vec<(usize, Vector3<f64>)>) -> TrackedObject3D {
    TrackedObject3D {
        center: Vector3::zeros(),
        keypoints: points.into_iter().map(|(channel, position)| Keypoint3D { channel, position, provenance: Provenance::Stereo }).collect(),
    }
}

#[test]
fn truth_as_prediction_scores_perfectly() {
    let seq = valve(80, 2.0);
    let preds: Vec<FramePrediction> = (0..seq.frames.len()).map(|frame| FramePrediction { frame, objects: vec![object(seq.labels[0].channel_points())] }).collect();
    let mut ev = Evaluator::new();
    ev.add_sequence(&seq, &preds).unwrap();
    let r = ev.report();
    let s = r.stats.unwrap();
    assert_eq!((s.mean_3d_cm, s.xy_mean_cm, s.median_cm), (0.0, 0.0, 0.0));
    assert_eq!(s.pct_under_3cm, 100.0);
    assert_eq!(r.misses, 0);
    // Center predictions are ignored rather than counted as false positives.
    assert_eq!(r.false_positives, 0);
}

#[test]
fn hand_computed_toy_metrics() {
    let seq = valve(81, 2.0);
    let f = fully_visible_frame(&seq);
    let truth = &seq.labels[0];
    let hub = truth.keypoints[0][0];
    let spokes = &truth.keypoints[1];
    let axis = seq.frames[f].left_pose.z_axis();
    let side = axis.cross(&Vector3::z()).normalize();
    // Errors: hub 1 cm along the optical axis, spokes 2, 4, 6 cm sideways,
    // and one far-away spoke that can only be a false positive.
    let pred = object(vec![
        (0, hub + axis * 0.01),
        (1, spokes[0] + side * 0.02),
        (1, spokes[1] + side * 0.04),
        (1, spokes[2] + side * 0.06),
        (1, hub + Vector3::new(5.0, 0.0, 0.0)),
    ]);
    let mut ev = Evaluator::new();
    ev.add_sequence(&seq, &[FramePrediction { frame: f, objects: vec![pred] }]).unwrap();
    let r = ev.report();
    let s = r.stats.unwrap();
    assert_eq!((r.truth_keypoints, r.matched, r.misses, r.false_positives), (4, 4, 0, 1));
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    assert!(close(s.mean_3d_cm, (1.0 + 2.0 + 4.0 + 6.0) / 4.0));
    assert!(close(s.xy_mean_cm, (2.0 + 4.0 + 6.0) / 4.0));
    assert!(close(s.pct_under_3cm, 50.0));
    assert!(close(s.median_cm, 3.0));
    assert!(close(s.p25_cm, 1.75));
    assert!(close(s.p75_cm, 4.5));
    assert_eq!(r.count_recovery.exact_frames, r.count_recovery.eligible_frames);
}

#[test]
fn predictions_outside_the_sequence_are_rejected() {
    let seq = valve(82, 1.0);
    let n = seq.frames.len();
    let mut ev = Evaluator::new();
    let err = ev.add_sequence(&seq, &[FramePrediction { frame: n, objects: vec![] }]).unwrap_err();
    assert_eq!(err, EvalError::FrameOutOfRange { sequence: "valve".into(), frame: n, frames: n });
    let dup = [FramePrediction { frame: 1, objects: vec![] }, FramePrediction { frame: 1, objects: vec![] }];
    assert_eq!(ev.add_sequence(&seq, &dup).unwrap_err(), EvalError::DuplicateFrame(1));
}

fn noisy_error(seq: &SequenceDataset, sigma: f64, seed: u64) -> f64 {
    let noise = NoiseModel { pixel_sigma: sigma, ..NoiseModel::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = &seq.categories[0];
    let inputs: Vec<StereoInput> = (0..seq.frames.len())
        .step_by(3)
        .map(|f| {
            let l = noisy_targets(seq, f, Camera::Left, &RenderParams::default(), &noise, &mut rng).unwrap();
            let r = noisy_targets(seq, f, Camera::Right, &RenderParams::default(), &noise, &mut rng).unwrap();
            StereoInput::new(seq, f, l, r)
        })
        .collect();
    let frames: Vec<usize> = (0..seq.frames.len()).step_by(3).collect();
    let preds: Vec<FramePrediction> = track_stereo(&inputs, &seq.calibration.rig, &TrackingParams::new(spec.center_channel()))
        .into_iter()
        .map(|p| FramePrediction { frame: frames[p.frame], ..p })
        .collect();
    let mut ev = Evaluator::new();
    ev.add_sequence(seq, &preds).unwrap();
    ev.report().stats.unwrap().mean_3d_cm
}

#[test]
fn error_grows_with_pixel_noise() {
    let seq = valve(83, 3.0);
    let sigmas = [0.0, 1.0, 3.0];
    let mut means = [0.0; 3];
    let seeds = 20;
    for seed in 0..seeds {
        for (m, s) in means.iter_mut().zip(sigmas) {
            *m += noisy_error(&seq, s, seed) / seeds as f64;
        }
    }
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}

#[test]
fn zero_detection_frames_are_cheap() {
    let seq = valve(84, 1.0);
    let mapping = FrameMapping::center_crop(1280, 720);
    let empty = FrameMaps { heatmaps: Array3::zeros((3, 64, 64)), center_field: Array4::zeros((3, 64, 64, 2)), depth: None, mapping };
    let inputs: Vec<StereoInput> = (0..200)
        .map(|i| {
            let f = &seq.frames[i % seq.frames.len()];
            StereoInput { left: empty.clone(), right: empty.clone(), poses: StereoPoses { left: f.left_pose, right: f.right_pose } }
        })
        .collect();
    let report = bench_stages(&inputs, &seq.calibration.rig, &TrackingParams::new(2));
    assert!(report.total_ms < 1.0, "{report:?}");
    assert_eq!(report.frames, 200);
}

#[test]
fn stage_times_sum_to_total() {
    let seq = valve(85, 1.0);
    let inputs = gt_stereo_inputs(&seq, &RenderParams::default()).unwrap();
    let r = bench_stages(&inputs, &seq.calibration.rig, &TrackingParams::new(2));
    let sum = r.extraction_ms + r.object_association_ms + r.lr_association_ms + r.triangulation_ms;
    assert!((sum - r.total_ms).abs() < 1e-12);
    assert_eq!(r.to_text().lines().count(), 6);
}

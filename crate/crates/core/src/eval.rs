//! Tracking metrics against simulator ground truth and per-stage timing.

use std::fmt::Write as _;
use std::time::Duration;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use crate::dataset::{frame_targets, Camera, DatasetError, SequenceDataset};
use crate::extraction::FrameMaps;
use crate::geometry::{ProjectionMatrix, StereoRig};
use crate::stereo::{run_stereo_frame, StageTimings, StereoPoses, TrackedObject3D, TrackingParams};
use crate::targets::{FrameMapping, RenderParams, TargetMaps};

/// Predictions further than this from every same-type truth point are unmatched.
pub const MATCH_GATE: f64 = 0.10;
pub const UNDER_THRESHOLD: f64 = 0.03;
/// Minimum center separation, output pixels, for a frame to count towards
/// object-count recovery.
pub const MIN_CENTER_SEPARATION: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("prediction for frame {frame} but sequence '{sequence}' has {frames} frames")]
    FrameOutOfRange { sequence: String, frame: usize, frames: usize },
    #[error("duplicate prediction for frame {0}")]
    DuplicateFrame(usize),
    #[error("sequence '{0}' has no category")]
    NoCategory(String),
}

/// Tracked objects of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FramePrediction {
    pub frame: usize,
    pub objects: Vec<TrackedObject3D>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_3d_cm: f64,
    /// Mean error with the left-camera depth component removed.
    pub xy_mean_cm: f64,
    pub pct_under_3cm: f64,
    pub p25_cm: f64,
    pub median_cm: f64,
    pub p75_cm: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecovery {
    /// Frames where every object center is visible and well separated in both images.
    pub eligible_frames: usize,
    /// Eligible frames whose predicted object count equals the truth.
    pub exact_frames: usize,
}

impl CountRecovery {
    pub fn rate(&self) -> Option<f64> {
        (self.eligible_frames > 0).then(|| self.exact_frames as f64 / self.eligible_frames as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: usize,
    pub frames: usize,
    pub truth_keypoints: usize,
    pub matched: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub stats: Option<ErrorStats>,
    pub count_recovery: CountRecovery,
}

impl MetricsReport {
    /// Human-readable table, one metric per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sequences        {}", self.sequences);
        let _ = writeln!(out, "frames           {}", self.frames);
        let _ = writeln!(out, "truth keypoints  {}", self.truth_keypoints);
        let _ = writeln!(out, "matched          {}", self.matched);
        let _ = writeln!(out, "misses           {}", self.misses);
        let _ = writeln!(out, "false positives  {}", self.false_positives);
        match &self.stats {
            Some(s) => {
                let _ = writeln!(out, "mean (cm)        {:.3}", s.mean_3d_cm);
                let _ = writeln!(out, "xy (cm)          {:.3}", s.xy_mean_cm);
                let _ = writeln!(out, "< 3 cm (%)       {:.2}", s.pct_under_3cm);
                let _ = writeln!(out, "25th (cm)        {:.3}", s.p25_cm);
                let _ = writeln!(out, "median (cm)      {:.3}", s.median_cm);
                let _ = writeln!(out, "75th (cm)        {:.3}", s.p75_cm);
            }
            None => out.push_str("no matched keypoints\n"),
        }
        let cr = self.count_recovery;
        let _ = writeln!(out, "count recovery   {}/{}", cr.exact_frames, cr.eligible_frames);
        out
    }
}

/// Linear interpolation between closest ranks of sorted `values`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// True when `x` projects into the network crop of the given camera.
pub fn visible_in_crop(seq: &SequenceDataset, frame: usize, camera: Camera, x: &Vector3<f64>) -> bool {
    let k = seq.intrinsics(camera);
    let m = FrameMapping::center_crop(k.width, k.height);
    let p = ProjectionMatrix::from_camera(k, seq.frames[frame].pose(camera));
    match p.project(x) {
        Ok(px) => m.shape(1).contains(&m.image_to_output(&px)),
        Err(_) => false,
    }
}

/// Greedy nearest assignment by ascending distance under `gate`.
/// Returns `(prediction, truth, distance)` triples.
pub fn greedy_match(pred: &[Vector3<f64>], truth: &[Vector3<f64>], gate: f64) -> Vec<(usize, usize, f64)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let d = (p - t).norm();
            if d < gate {
                cands.push((d, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut used_p = vec![false; pred.len()];
    let mut used_t = vec![false; truth.len()];
    let mut out = Vec::new();
    for (d, i, j) in cands {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            out.push((i, j, d));
        }
    }
    out
}

/// Collects per-keypoint errors over any number of sequences.
#[derive(Debug, Clone, Default)]
pub struct Evaluator {
    errors: Vec<f64>,
    xy_errors: Vec<f64>,
    sequences: usize,
    frames: usize,
    truth_keypoints: usize,
    misses: usize,
    false_positives: usize,
    count: CountRecovery,
}

fn centers_separated(seq: &SequenceDataset, frame: usize, camera: Camera) -> bool {
    let k = seq.intrinsics(camera);
    let m = FrameMapping::center_crop(k.width, k.height);
    let p = ProjectionMatrix::from_camera(k, seq.frames[frame].pose(camera));
    let mut centers: Vec<Vector2<f64>> = Vec::with_capacity(seq.labels.len());
    for o in &seq.labels {
        match p.project(&o.center()) {
            Ok(px) if m.shape(1).contains(&m.image_to_output(&px)) => centers.push(m.image_to_output(&px)),
            _ => return false,
        }
    }
    centers.iter().enumerate().all(|(i, a)| centers[i + 1..].iter().all(|b| (a - b).norm() > MIN_CENTER_SEPARATION))
}

impl Evaluator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scores the predictions of one sequence against its labels. The center
    /// channel is an artifact of the method and is not scored.
    pub fn add_sequence(&mut self, seq: &SequenceDataset, predictions: &[FramePrediction]) -> Result<(), EvalError> {
        let spec = seq.categories.first().ok_or_else(|| EvalError::NoCategory(seq.id.clone()))?;
        let types = spec.keypoint_types.len();
        let mut seen = vec![false; seq.frames.len()];
        for pred in predictions {
            if pred.frame >= seq.frames.len() {
                return Err(EvalError::FrameOutOfRange { sequence: seq.id.clone(), frame: pred.frame, frames: seq.frames.len() });
            }
            if std::mem::replace(&mut seen[pred.frame], true) {
                return Err(EvalError::DuplicateFrame(pred.frame));
            }
        }

        for pred in predictions {
            let f = pred.frame;
            let axis = seq.frames[f].left_pose.z_axis();
            for channel in 0..types {
                let truth: Vec<Vector3<f64>> = seq
                    .labels
                    .iter()
                    .filter(|o| o.category == spec.name)
                    .flat_map(|o| o.keypoints[channel].iter().copied())
                    .filter(|x| visible_in_crop(seq, f, Camera::Left, x))
                    .collect();
                let predicted: Vec<Vector3<f64>> =
                    pred.objects.iter().flat_map(|o| o.keypoints.iter().filter(|k| k.channel == channel).map(|k| k.position)).collect();
                let matches = greedy_match(&predicted, &truth, MATCH_GATE);
                for &(i, j, d) in &matches {
                    let e = predicted[i] - truth[j];
                    self.errors.push(d);
                    self.xy_errors.push((e - axis * e.dot(&axis)).norm());
                }
                self.truth_keypoints += truth.len();
                self.misses += truth.len() - matches.len();
                self.false_positives += predicted.len() - matches.len();
            }
            if centers_separated(seq, f, Camera::Left) && centers_separated(seq, f, Camera::Right) {
                self.count.eligible_frames += 1;
                if pred.objects.len() == seq.labels.len() {
                    self.count.exact_frames += 1;
                }
            }
        }
        self.sequences += 1;
        self.frames += predictions.len();
        Ok(())
    }

    pub fn report(&self) -> MetricsReport {
        let stats = (!self.errors.is_empty()).then(|| {
            let mut sorted = self.errors.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len() as f64;
            ErrorStats {
                mean_3d_cm: 100.0 * sorted.iter().sum::<f64>() / n,
                xy_mean_cm: 100.0 * self.xy_errors.iter().sum::<f64>() / n,
                pct_under_3cm: 100.0 * sorted.iter().filter(|&&e| e < UNDER_THRESHOLD).count() as f64 / n,
                p25_cm: 100.0 * percentile(&sorted, 0.25),
                median_cm: 100.0 * percentile(&sorted, 0.5),
                p75_cm: 100.0 * percentile(&sorted, 0.75),
            }
        });
        MetricsReport {
            sequences: self.sequences,
            frames: self.frames,
            truth_keypoints: self.truth_keypoints,
            matched: self.errors.len(),
            misses: self.misses,
            false_positives: self.false_positives,
            stats,
            count_recovery: self.count,
        }
    }
}

/// Maps and poses of one stereo frame, ready for the tracker.
#[derive(Debug, Clone)]
pub struct StereoInput {
    pub left: FrameMaps,
    pub right: FrameMaps,
    pub poses: StereoPoses,
}

/// Mean wall-clock milliseconds per frame for each non-network stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub frames: usize,
    pub extraction_ms: f64,
    pub object_association_ms: f64,
    pub lr_association_ms: f64,
    pub triangulation_ms: f64,
    pub total_ms: f64,
}

impl StageReport {
    pub fn from_totals(total: &StageTimings, frames: usize) -> Self {
        let ms = |d: Duration| if frames == 0 { 0.0 } else { d.as_secs_f64() * 1e3 / frames as f64 };
        let r = Self {
            frames,
            extraction_ms: ms(total.extraction),
            object_association_ms: ms(total.object_association),
            lr_association_ms: ms(total.lr_association),
            triangulation_ms: ms(total.triangulation),
            total_ms: 0.0,
        };
        Self { total_ms: r.extraction_ms + r.object_association_ms + r.lr_association_ms + r.triangulation_ms, ..r }
    }

    pub fn to_text(&self) -> String {
        format!(
            "frames                 {}\nkeypoint extraction    {:.3} ms\nobject association     {:.3} ms\nL-R association        {:.3} ms\ntriangulation          {:.3} ms\ntotal                  {:.3} ms\n",
            self.frames, self.extraction_ms, self.object_association_ms, self.lr_association_ms, self.triangulation_ms, self.total_ms
        )
    }
}

impl StereoInput {
    pub fn new(seq: &SequenceDataset, frame: usize, left: TargetMaps, right: TargetMaps) -> Self {
        let maps = |t: TargetMaps, camera: Camera| {
            let k = seq.intrinsics(camera);
            FrameMaps { heatmaps: t.heatmaps, center_field: t.center_field, depth: Some(t.depth), mapping: FrameMapping::center_crop(k.width, k.height) }
        };
        let f = &seq.frames[frame];
        Self { left: maps(left, Camera::Left), right: maps(right, Camera::Right), poses: StereoPoses { left: f.left_pose, right: f.right_pose } }
    }
}

/// Ground-truth-fidelity maps for every frame of a labeled sequence.
pub fn gt_stereo_inputs(seq: &SequenceDataset, render: &RenderParams) -> Result<Vec<StereoInput>, DatasetError> {
    let spec = seq.categories.first().ok_or_else(|| DatasetError::UnknownCategory(String::new()))?;
    (0..seq.frames.len())
        .into_par_iter()
        .map(|f| {
            let left = frame_targets(seq, spec, f, Camera::Left, render)?;
            let right = frame_targets(seq, spec, f, Camera::Right, render)?;
            Ok(StereoInput::new(seq, f, left, right))
        })
        .collect()
}

/// Stereo tracking of every input frame, in parallel.
pub fn track_stereo(inputs: &[StereoInput], rig: &StereoRig, params: &TrackingParams) -> Vec<FramePrediction> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(frame, input)| FramePrediction { frame, objects: run_stereo_frame(&input.left, &input.right, rig, &input.poses, params).objects })
        .collect()
}

/// Renders ground-truth-fidelity maps and tracks them frame by frame, in
/// parallel, without keeping the maps of the whole sequence in memory.
pub fn track_gt_sequence(seq: &SequenceDataset, render: &RenderParams, params: &TrackingParams) -> Result<Vec<FramePrediction>, DatasetError> {
    let spec = seq.categories.first().ok_or_else(|| DatasetError::UnknownCategory(String::new()))?;
    (0..seq.frames.len())
        .into_par_iter()
        .map(|f| {
            let input = StereoInput::new(seq, f, frame_targets(seq, spec, f, Camera::Left, render)?, frame_targets(seq, spec, f, Camera::Right, render)?);
            let objects = run_stereo_frame(&input.left, &input.right, &seq.calibration.rig, &input.poses, params).objects;
            Ok(FramePrediction { frame: f, objects })
        })
        .collect()
}

/// Runs the stereo tracker sequentially over `inputs` and averages stage times.
pub fn bench_stages(inputs: &[StereoInput], rig: &StereoRig, params: &TrackingParams) -> StageReport {
    let mut total = StageTimings::default();
    for input in inputs {
        total += run_stereo_frame(&input.left, &input.right, rig, &input.poses, params).timings;
    }
    StageReport::from_totals(&total, inputs.len())
}

//! Pose-stamped stereo sequences, 3D label store, two-view label propagation
//! and training-target generation.
//!
//! A sequence directory contains:
//!
//! - `sequence.toml`: `version`, `id`, `split` (`train` | `test`)
//! - `calibration.toml`: see [`crate::calibration`]
//! - `poses.txt`: `# kptk poses v1` header, then one line per frame:
//!   `timestamp` followed by the left and the right camera-in-base pose, each
//!   as 9 row-major rotation entries and 3 translation entries (25 numbers)
//! - `images.txt` (optional): `frame left_path right_path` per line
//! - `labels.json` (optional): categories and labeled objects, 3D base frame
//!
//! Labels are only ever stored in 3D; every 2D label is derived by projection.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{Calibration, CalibrationError};
use crate::geometry::{triangulate_dlt, GeometryError, ProjectionMatrix, RigidTransform};
use crate::targets::{render_targets, CategorySpec, FrameKeypoint, FrameMapping, RenderParams, TargetError, TargetMaps};
use crate::tensor::{MapKind, TensorError, TensorFile};

pub const SEQUENCE_VERSION: u32 = 1;
pub const POSES_HEADER: &str = "# kptk poses v1";
pub const LABELS_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
/// Maximum number of frames considered when choosing the labeling pair.
pub const MAX_VIEW_CANDIDATES: usize = 200;
/// Maximum gap between an image timestamp and the nearest pose sample.
pub const POSE_SYNC_TOLERANCE: f64 = 0.020;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("timestamps must be strictly increasing (frame {0})")]
    NonMonotonicTimestamps(usize),
    #[error("sequence needs at least two frames, has {0}")]
    TooFewFrames(usize),
    #[error("frame index {0} out of range")]
    FrameOutOfRange(usize),
    #[error("keypoint {index}: {source}")]
    Triangulation { index: usize, source: GeometryError },
    #[error("click lists differ in length ({a} vs {b})")]
    ClickMismatch { a: usize, b: usize },
    #[error("unknown category '{0}'")]
    UnknownCategory(String),
    #[error("keypoint channel {channel} out of range for category '{category}'")]
    ChannelOutOfRange { category: String, channel: usize },
    #[error("frame {frame}: {source}")]
    Target { frame: usize, source: TargetError },
    #[error("frame {frame}: {source}")]
    Tensor { frame: usize, source: TensorError },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camera {
    Left,
    Right,
}

impl Camera {
    pub fn name(self) -> &'static str {
        match self {
            Camera::Left => "left",
            Camera::Right => "right",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Seconds.
    pub timestamp: f64,
    pub left_pose: RigidTransform,
    pub right_pose: RigidTransform,
    pub left_image: Option<PathBuf>,
    pub right_image: Option<PathBuf>,
}

impl Frame {
    pub fn pose(&self, camera: Camera) -> &RigidTransform {
        match camera {
            Camera::Left => &self.left_pose,
            Camera::Right => &self.right_pose,
        }
    }
}

/// One labeled object: per-type lists of base-frame points.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub category: String,
    pub keypoints: Vec<Vec<Vector3<f64>>>,
}

impl ObjectInstance {
    /// Mean of all labeled keypoints; always recomputed from the labels.
    pub fn center(&self) -> Vector3<f64> {
        let (sum, n) = self
            .keypoints
            .iter()
            .flatten()
            .fold((Vector3::zeros(), 0usize), |(s, n), p| (s + p, n + 1));
        if n == 0 {
            Vector3::zeros()
        } else {
            sum / n as f64
        }
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.iter().map(Vec::len).sum()
    }

    /// `(channel, point)` pairs including the appended center channel.
    pub fn channel_points(&self) -> Vec<(usize, Vector3<f64>)> {
        let mut out: Vec<(usize, Vector3<f64>)> =
            self.keypoints.iter().enumerate().flat_map(|(c, pts)| pts.iter().map(move |p| (c, *p))).collect();
        out.push((self.keypoints.len(), self.center()));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub id: String,
    pub split: Split,
    pub calibration: Calibration,
    pub frames: Vec<Frame>,
    pub categories: Vec<CategorySpec>,
    pub labels: Vec<ObjectInstance>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceMeta {
    version: u32,
    id: String,
    split: Split,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    category: String,
    keypoints: Vec<Vec<[f64; 3]>>,
    /// Written for readers; ignored and recomputed on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<[f64; 3]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsRecord {
    version: u32,
    categories: Vec<CategorySpec>,
    objects: Vec<ObjectRecord>,
}

/// Serialized form of a label store (`labels.json`).
pub fn labels_to_json(categories: &[CategorySpec], labels: &[ObjectInstance]) -> String {
    let rec = LabelsRecord {
        version: LABELS_VERSION,
        categories: categories.to_vec(),
        objects: labels
            .iter()
            .map(|o| {
                let c = o.center();
                ObjectRecord {
                    category: o.category.clone(),
                    keypoints: o.keypoints.iter().map(|pts| pts.iter().map(|p| [p.x, p.y, p.z]).collect()).collect(),
                    center: Some([c.x, c.y, c.z]),
                }
            })
            .collect(),
    };
    serde_json::to_string_pretty(&rec).expect("labels serialize")
}

pub fn labels_from_json(text: &str, path: &Path) -> Result<(Vec<CategorySpec>, Vec<ObjectInstance>), DatasetError> {
    let parse = |message: String| DatasetError::Parse { path: path.display().to_string(), line: 0, message };
    let rec: LabelsRecord = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
    if rec.version != LABELS_VERSION {
        return Err(parse(format!("unsupported labels version {}", rec.version)));
    }
    for c in &rec.categories {
        c.validate().map_err(|e| parse(e.to_string()))?;
    }
    let mut labels = Vec::with_capacity(rec.objects.len());
    for o in rec.objects {
        let spec = rec.categories.iter().find(|c| c.name == o.category).ok_or_else(|| DatasetError::UnknownCategory(o.category.clone()))?;
        if o.keypoints.len() != spec.keypoint_types.len() {
            return Err(parse(format!("object of '{}' has {} keypoint types, expected {}", o.category, o.keypoints.len(), spec.keypoint_types.len())));
        }
        labels.push(ObjectInstance {
            category: o.category,
            keypoints: o.keypoints.into_iter().map(|pts| pts.into_iter().map(Vector3::from).collect()).collect(),
        });
    }
    Ok((rec.categories, labels))
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn pose_fields(t: &RigidTransform, out: &mut String) {
    let r = t.rotation();
    for i in 0..3 {
        for j in 0..3 {
            let _ = write!(out, " {}", r[(i, j)]);
        }
    }
    let tr = t.translation();
    let _ = write!(out, " {} {} {}", tr.x, tr.y, tr.z);
}

fn parse_pose(values: &[f64]) -> Result<RigidTransform, GeometryError> {
    RigidTransform::new(Matrix3::from_row_slice(&values[..9]), Vector3::new(values[9], values[10], values[11]))
}

pub fn poses_to_text(frames: &[Frame]) -> String {
    let mut out = String::from(POSES_HEADER);
    out.push('\n');
    for f in frames {
        let _ = write!(out, "{}", f.timestamp);
        pose_fields(&f.left_pose, &mut out);
        pose_fields(&f.right_pose, &mut out);
        out.push('\n');
    }
    out
}

pub fn poses_from_text(text: &str, path: &Path) -> Result<Vec<Frame>, DatasetError> {
    let err = |line: usize, message: String| DatasetError::Parse { path: path.display().to_string(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == POSES_HEADER => {}
        _ => return Err(err(1, format!("expected header '{POSES_HEADER}'"))),
    }
    let mut frames = Vec::new();
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| err(n + 1, e.to_string())))
            .collect::<Result<_, _>>()?;
        if values.len() != 25 {
            return Err(err(n + 1, format!("expected 25 values, got {}", values.len())));
        }
        let left_pose = parse_pose(&values[1..13]).map_err(|e| err(n + 1, e.to_string()))?;
        let right_pose = parse_pose(&values[13..25]).map_err(|e| err(n + 1, e.to_string()))?;
        frames.push(Frame { timestamp: values[0], left_pose, right_pose, left_image: None, right_image: None });
    }
    Ok(frames)
}

impl SequenceDataset {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].timestamp.partial_cmp(&w[0].timestamp) != Some(std::cmp::Ordering::Greater) {
                return Err(DatasetError::NonMonotonicTimestamps(i + 1));
            }
        }
        for o in &self.labels {
            let spec = self.category(&o.category)?;
            if o.keypoints.len() != spec.keypoint_types.len() {
                return Err(DatasetError::ChannelOutOfRange { category: o.category.clone(), channel: o.keypoints.len() });
            }
        }
        Ok(())
    }

    pub fn category(&self, name: &str) -> Result<&CategorySpec, DatasetError> {
        self.categories.iter().find(|c| c.name == name).ok_or_else(|| DatasetError::UnknownCategory(name.to_string()))
    }

    pub fn frame(&self, index: usize) -> Result<&Frame, DatasetError> {
        self.frames.get(index).ok_or(DatasetError::FrameOutOfRange(index))
    }

    pub fn intrinsics(&self, camera: Camera) -> &crate::geometry::CameraIntrinsics {
        match camera {
            Camera::Left => &self.calibration.rig.left,
            Camera::Right => &self.calibration.rig.right,
        }
    }

    pub fn projection(&self, frame: usize, camera: Camera) -> Result<ProjectionMatrix, DatasetError> {
        let f = self.frame(frame)?;
        Ok(ProjectionMatrix::from_camera(self.intrinsics(camera), f.pose(camera)))
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta = SequenceMeta { version: SEQUENCE_VERSION, id: self.id.clone(), split: self.split };
        let meta_path = dir.join("sequence.toml");
        fs::write(&meta_path, toml::to_string(&meta).expect("meta serializes")).map_err(io_err(&meta_path))?;
        let cal = dir.join("calibration.toml");
        fs::write(&cal, self.calibration.to_toml()).map_err(io_err(&cal))?;
        let poses = dir.join("poses.txt");
        fs::write(&poses, poses_to_text(&self.frames)).map_err(io_err(&poses))?;
        let images: String = self
            .frames
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match (&f.left_image, &f.right_image) {
                (Some(l), Some(r)) => Some(format!("{i} {} {}\n", l.display(), r.display())),
                _ => None,
            })
            .collect();
        if !images.is_empty() {
            let p = dir.join("images.txt");
            fs::write(&p, images).map_err(io_err(&p))?;
        }
        write_atomic(&dir.join("labels.json"), labels_to_json(&self.categories, &self.labels).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let meta_path = dir.join("sequence.toml");
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let meta: SequenceMeta = toml::from_str(&text).map_err(|e| DatasetError::Parse { path: meta_path.display().to_string(), line: 0, message: e.to_string() })?;
        if meta.version != SEQUENCE_VERSION {
            return Err(DatasetError::Parse { path: meta_path.display().to_string(), line: 0, message: format!("unsupported version {}", meta.version) });
        }
        let calibration = Calibration::load(&dir.join("calibration.toml"))?;
        let poses_path = dir.join("poses.txt");
        let mut frames = poses_from_text(&fs::read_to_string(&poses_path).map_err(io_err(&poses_path))?, &poses_path)?;

        let images_path = dir.join("images.txt");
        if images_path.exists() {
            let text = fs::read_to_string(&images_path).map_err(io_err(&images_path))?;
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let parts: Vec<&str> = line.split_whitespace().collect();
                let bad = |message: String| DatasetError::Parse { path: images_path.display().to_string(), line: n + 1, message };
                if parts.len() != 3 {
                    return Err(bad("expected 'frame left right'".into()));
                }
                let i: usize = parts[0].parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
                let f = frames.get_mut(i).ok_or_else(|| bad(format!("frame {i} out of range")))?;
                f.left_image = Some(PathBuf::from(parts[1]));
                f.right_image = Some(PathBuf::from(parts[2]));
            }
        }

        let labels_path = dir.join("labels.json");
        let (categories, labels) = if labels_path.exists() {
            labels_from_json(&fs::read_to_string(&labels_path).map_err(io_err(&labels_path))?, &labels_path)?
        } else {
            (Vec::new(), Vec::new())
        };
        let seq = Self { id: meta.id, split: meta.split, calibration, frames, categories, labels };
        seq.validate()?;
        Ok(seq)
    }
}

/// Interpolates pose samples at image timestamps.
///
/// Translation is interpolated linearly and rotation spherically between the
/// bracketing samples. Images whose nearest sample is further than
/// `tolerance` seconds away get `None` and are dropped by the caller.
pub fn associate_poses(image_times: &[f64], samples: &[(f64, RigidTransform)], tolerance: f64) -> Vec<Option<RigidTransform>> {
    image_times
        .iter()
        .map(|&t| {
            let idx = samples.partition_point(|(ts, _)| *ts <= t);
            let before = idx.checked_sub(1).map(|i| &samples[i]);
            let after = samples.get(idx);
            let nearest = [before, after].into_iter().flatten().map(|(ts, _)| (ts - t).abs()).fold(f64::INFINITY, f64::min);
            if nearest > tolerance {
                warn!("no pose within {:.0} ms of image at t={t:.3}s; dropping frame", tolerance * 1e3);
                return None;
            }
            match (before, after) {
                (Some((t0, p0)), Some((t1, p1))) if t1 > t0 => {
                    let s = (t - t0) / (t1 - t0);
                    let q = p0.quaternion().slerp(&p1.quaternion(), s);
                    let tr = p0.translation() * (1.0 - s) + p1.translation() * s;
                    Some(RigidTransform::from_quaternion(&q, tr))
                }
                (Some((_, p)), _) | (None, Some((_, p))) => Some(*p),
                (None, None) => None,
            }
        })
        .collect()
}

/// A candidate labeling pair and the |cos| between their optical axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPair {
    pub a: usize,
    pub b: usize,
    pub abs_cos: f64,
}

fn candidate_frames(n: usize) -> Vec<usize> {
    let stride = n.div_ceil(MAX_VIEW_CANDIDATES).max(1);
    (0..n).step_by(stride).collect()
}

/// All candidate pairs ordered from most to least orthogonal.
pub fn ranked_view_pairs(seq: &SequenceDataset) -> Result<Vec<ViewPair>, DatasetError> {
    if seq.frames.len() < 2 {
        return Err(DatasetError::TooFewFrames(seq.frames.len()));
    }
    let cands = candidate_frames(seq.frames.len());
    let axes: Vec<Vector3<f64>> = cands.iter().map(|&i| seq.frames[i].left_pose.z_axis()).collect();
    let mut pairs = Vec::with_capacity(cands.len() * (cands.len() - 1) / 2);
    for (x, &a) in cands.iter().enumerate() {
        for (y, &b) in cands.iter().enumerate().skip(x + 1) {
            pairs.push(ViewPair { a, b, abs_cos: axes[x].dot(&axes[y]).abs() });
        }
    }
    pairs.sort_by(|p, q| p.abs_cos.total_cmp(&q.abs_cos).then((p.a, p.b).cmp(&(q.a, q.b))));
    Ok(pairs)
}

/// The frame pair whose left-camera optical axes are closest to perpendicular.
pub fn select_label_views(seq: &SequenceDataset) -> Result<ViewPair, DatasetError> {
    let best = ranked_view_pairs(seq)?[0];
    if best.abs_cos > 0.999 {
        warn!("sequence '{}': best labeling pair is nearly parallel (|cos| = {:.4})", seq.id, best.abs_cos);
    }
    Ok(best)
}

/// A click pair for one keypoint, in left-image pixels of frames a and b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Click {
    pub channel: usize,
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label2D {
    pub channel: usize,
    /// `None` when the point is behind the camera.
    pub position: Option<Vector2<f64>>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabels {
    pub frame: usize,
    pub left: Vec<Label2D>,
    pub right: Vec<Label2D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub instance: ObjectInstance,
    /// Reprojection error of each keypoint in frame a, pixels.
    pub residuals_a: Vec<f64>,
    pub residuals_b: Vec<f64>,
    pub frames: Vec<FrameLabels>,
}

/// Projects an instance (including its center) into one camera of one frame.
pub fn project_instance(seq: &SequenceDataset, instance: &ObjectInstance, frame: usize, camera: Camera) -> Result<Vec<Label2D>, DatasetError> {
    let p = seq.projection(frame, camera)?;
    let k = seq.intrinsics(camera);
    Ok(instance
        .channel_points()
        .into_iter()
        .map(|(channel, x)| match p.project(&x) {
            Ok(px) => Label2D { channel, position: Some(px), visible: k.contains(&px) },
            Err(_) => Label2D { channel, position: None, visible: false },
        })
        .collect())
}

/// Triangulates clicked keypoints from two frames and backprojects the
/// resulting object into every frame of the sequence.
pub fn propagate_labels(seq: &SequenceDataset, category: &str, frame_a: usize, frame_b: usize, clicks: &[Click]) -> Result<Propagation, DatasetError> {
    let spec = seq.category(category)?;
    let pa = seq.projection(frame_a, Camera::Left)?;
    let pb = seq.projection(frame_b, Camera::Left)?;

    let mut keypoints = vec![Vec::new(); spec.keypoint_types.len()];
    let mut residuals_a = Vec::with_capacity(clicks.len());
    let mut residuals_b = Vec::with_capacity(clicks.len());
    for (index, click) in clicks.iter().enumerate() {
        if click.channel >= spec.keypoint_types.len() {
            return Err(DatasetError::ChannelOutOfRange { category: category.to_string(), channel: click.channel });
        }
        let x = triangulate_dlt(&[(pa, click.a), (pb, click.b)]).map_err(|source| DatasetError::Triangulation { index, source })?;
        let reproj = |p: &ProjectionMatrix, c: &Vector2<f64>| p.project(&x).map(|px| (px - c).norm()).unwrap_or(f64::INFINITY);
        residuals_a.push(reproj(&pa, &click.a));
        residuals_b.push(reproj(&pb, &click.b));
        keypoints[click.channel].push(x);
    }
    let instance = ObjectInstance { category: category.to_string(), keypoints };
    let frames = (0..seq.frames.len())
        .map(|f| {
            Ok(FrameLabels {
                frame: f,
                left: project_instance(seq, &instance, f, Camera::Left)?,
                right: project_instance(seq, &instance, f, Camera::Right)?,
            })
        })
        .collect::<Result<_, DatasetError>>()?;
    Ok(Propagation { instance, residuals_a, residuals_b, frames })
}

/// Settings for target generation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenerateConfig {
    pub render: RenderParams,
}

/// Projected keypoints (output-map pixels, per channel) and object centers of
/// one camera image. Keypoints off the map are left out; objects whose
/// center is behind the camera are skipped.
pub fn frame_keypoints(seq: &SequenceDataset, spec: &CategorySpec, frame: usize, camera: Camera) -> Result<FrameProjection, DatasetError> {
    let k = seq.intrinsics(camera);
    let mapping = FrameMapping::center_crop(k.width, k.height);
    let p = seq.projection(frame, camera)?;
    let base_to_camera = seq.frame(frame)?.pose(camera).inverse();
    let shape = mapping.shape(spec.channels());

    let mut keypoints: Vec<Vec<FrameKeypoint>> = vec![Vec::new(); spec.channels()];
    let mut centers = Vec::new();
    for object in seq.labels.iter().filter(|o| o.category == spec.name) {
        let Ok(center_px) = p.project(&object.center()) else {
            continue;
        };
        let object_index = centers.len();
        centers.push(mapping.image_to_output(&center_px));
        for (channel, x) in object.channel_points() {
            let Ok(px) = p.project(&x) else { continue };
            let m = mapping.image_to_output(&px);
            if shape.contains(&m) {
                keypoints[channel].push(FrameKeypoint::new(m, object_index, base_to_camera.transform_point(&x).z));
            }
        }
    }
    Ok(FrameProjection { mapping, keypoints, centers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameProjection {
    pub mapping: FrameMapping,
    pub keypoints: Vec<Vec<FrameKeypoint>>,
    pub centers: Vec<Vector2<f64>>,
}

impl FrameProjection {
    pub fn render(&self, spec: &CategorySpec, frame: usize, render: &RenderParams) -> Result<TargetMaps, DatasetError> {
        let shape = self.mapping.shape(spec.channels());
        let (maps, _) =
            render_targets(&self.keypoints, &self.centers, shape, spec.center_channel(), render).map_err(|source| DatasetError::Target { frame, source })?;
        Ok(maps)
    }
}

/// Renders the training maps of one camera image from the 3D labels.
pub fn frame_targets(seq: &SequenceDataset, spec: &CategorySpec, frame: usize, camera: Camera, render: &RenderParams) -> Result<TargetMaps, DatasetError> {
    frame_keypoints(seq, spec, frame, camera)?.render(spec, frame, render)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraEntry {
    pub heatmap: String,
    pub center: String,
    pub depth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub frame: usize,
    pub timestamp: f64,
    pub left: CameraEntry,
    pub right: CameraEntry,
}

/// Index of generated tensors (`manifest.json` in the targets directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub sequence: String,
    pub category: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    pub depth_radius: f64,
    pub left_mapping: FrameMapping,
    pub right_mapping: FrameMapping,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<String>,
    pub frames: Vec<ManifestFrame>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Parse { path: path.display().to_string(), line: 0, message: e.to_string() })
    }
}

fn write_camera(out_dir: &Path, frame: usize, camera: Camera, maps: &TargetMaps) -> Result<CameraEntry, DatasetError> {
    let name = |kind: MapKind| format!("{frame:06}_{}_{}.kptm", camera.name(), kind.name());
    let files = [
        (MapKind::Heatmap, TensorFile::from_maps(MapKind::Heatmap, &maps.heatmaps)),
        (MapKind::CenterField, TensorFile::from_center_field(&maps.center_field)),
        (MapKind::Depth, TensorFile::from_maps(MapKind::Depth, &maps.depth)),
    ];
    for (kind, t) in &files {
        t.write(&out_dir.join(name(*kind))).map_err(|source| DatasetError::Tensor { frame, source })?;
    }
    Ok(CameraEntry { heatmap: name(MapKind::Heatmap), center: name(MapKind::CenterField), depth: name(MapKind::Depth) })
}

/// Renders and writes heatmap, center-field and depth tensors for both
/// cameras of every frame, plus `manifest.json`.
pub fn generate_dataset(seq: &SequenceDataset, category: &str, config: &GenerateConfig, out_dir: &Path, stamp: Option<String>) -> Result<Manifest, DatasetError> {
    let spec = seq.category(category)?.clone();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    if !seq.labels.iter().any(|o| o.category == spec.name) {
        warn!("sequence '{}' has no '{}' labels; all maps will be zero", seq.id, spec.name);
    }
    let frames: Vec<ManifestFrame> = (0..seq.frames.len())
        .into_par_iter()
        .map(|f| {
            let left = frame_targets(seq, &spec, f, Camera::Left, &config.render)?;
            let right = frame_targets(seq, &spec, f, Camera::Right, &config.render)?;
            Ok(ManifestFrame {
                frame: f,
                timestamp: seq.frames[f].timestamp,
                left: write_camera(out_dir, f, Camera::Left, &left)?,
                right: write_camera(out_dir, f, Camera::Right, &right)?,
            })
        })
        .collect::<Result<_, DatasetError>>()?;

    let rig = &seq.calibration.rig;
    let left_mapping = FrameMapping::center_crop(rig.left.width, rig.left.height);
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        sequence: seq.id.clone(),
        category: spec.name.clone(),
        channels: spec.channels(),
        height: left_mapping.output_size,
        width: left_mapping.output_size,
        sigma: config.render.sigma,
        depth_radius: config.render.depth_radius,
        left_mapping,
        right_mapping: FrameMapping::center_crop(rig.right.width, rig.right.height),
        stamp,
        frames,
    };
    let path = out_dir.join("manifest.json");
    write_atomic(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes").as_bytes())?;
    Ok(manifest)
}

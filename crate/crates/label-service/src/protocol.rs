//! JSON request and response bodies, schema version 1.

use kptk_core::geometry::{CameraIntrinsics, RigidTransform};
use kptk_core::targets::CategorySpec;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenRequest {
    pub version: u32,
    pub sequence: String,
    /// Categories to register when the sequence does not define them yet.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<CategorySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwapRequest {
    pub version: u32,
    pub slot: Slot,
}

/// Clicks for one object, in left-image pixels of frames a and b. Entry
/// `i` of both click lists belongs to `keypoint_types[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub version: u32,
    pub category: String,
    pub keypoint_types: Vec<String>,
    pub clicks_a: Vec<[f64; 2]>,
    pub clicks_b: Vec<[f64; 2]>,
    /// Frames to backproject into; defaults to the labeling pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommitRequest {
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackprojectRequest {
    pub version: u32,
    pub frames: Vec<usize>,
    /// Index of a committed object; the pending submission when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairInfo {
    pub a: usize,
    pub b: usize,
    /// |cos| of the angle between the two left-camera optical axes.
    pub abs_cos: f64,
}

/// Row-major 4x4 camera-in-base transforms of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePoses {
    pub frame: usize,
    pub left: [f64; 16],
    pub right: [f64; 16],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraIntrinsics> for Intrinsics {
    fn from(k: &CameraIntrinsics) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigIntrinsics {
    pub left: Intrinsics,
    pub right: Intrinsics,
}

pub fn pose_array(t: &RigidTransform) -> [f64; 16] {
    let m = t.to_homogeneous();
    let mut out = [0.0; 16];
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = m[(r, c)];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResponse {
    pub version: u32,
    pub pair: PairInfo,
    pub poses: [FramePoses; 2],
    /// Set when a swap ran out of unused frames and restarted the cycle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenResponse {
    pub version: u32,
    pub session: u64,
    pub sequence: String,
    /// False when another session already holds the sequence for writing.
    pub writable: bool,
    pub frame_count: usize,
    pub intrinsics: RigIntrinsics,
    pub categories: Vec<CategorySpec>,
    pub committed: usize,
    pub pair: PairInfo,
    pub poses: [FramePoses; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointResult {
    pub index: usize,
    #[serde(rename = "type")]
    pub keypoint_type: String,
    pub channel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub channel: usize,
    /// Keypoint type name, or `center` for the appended center channel.
    #[serde(rename = "type")]
    pub keypoint_type: String,
    /// Pixel position; null when the point is behind the camera.
    pub position: Option<[f64; 2]>,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backprojection {
    pub frame: usize,
    pub left: Vec<ProjectedPoint>,
    pub right: Vec<ProjectedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub version: u32,
    pub keypoints: Vec<KeypointResult>,
    pub center: [f64; 3],
    pub backprojections: Vec<Backprojection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackprojectResponse {
    pub version: u32,
    pub backprojections: Vec<Backprojection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    pub version: u32,
    pub committed: usize,
    pub center: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub index: usize,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesResponse {
    pub version: u32,
    pub frames: Vec<FrameInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub version: u32,
    pub error: ErrorBody,
    /// Per-keypoint outcomes when a submission fails on some keypoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keypoints: Option<Vec<KeypointResult>>,
}

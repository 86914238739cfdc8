//! Stereo calibration file (TOML).
//!
//! ```toml
//! version = 1
//!
//! [left]
//! fx = 700.0
//! fy = 700.0
//! cx = 640.0
//! cy = 360.0
//! width = 1280
//! height = 720
//! distortion = [0.0, 0.0, 0.0, 0.0, 0.0]
//!
//! [right]
//! # same keys as [left]
//!
//! [left_to_right]          # right camera pose in the left camera frame
//! rotation = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]   # row-major
//! translation = [0.063, 0.0, 0.0]                             # meters
//!
//! [hand_eye]               # left camera pose in the wrist frame
//! rotation = [...]
//! translation = [...]
//! ```
//!
//! Nonzero distortion coefficients are rejected: images are expected to be
//! undistorted upstream.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, RigidTransform, StereoRig};

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("failed to read calibration {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed calibration: {0}")]
    Parse(String),
    #[error("unsupported calibration version {0} (expected {CALIBRATION_VERSION})")]
    Version(u32),
    #[error("{camera} camera has nonzero distortion coefficients; undistort images first")]
    Distortion { camera: &'static str },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub rig: StereoRig,
    /// Left camera pose in the robot wrist frame.
    pub hand_eye: RigidTransform,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    #[serde(default)]
    distortion: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRecord {
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationRecord {
    version: u32,
    left: CameraRecord,
    right: CameraRecord,
    left_to_right: TransformRecord,
    hand_eye: TransformRecord,
}

impl CameraRecord {
    fn into_intrinsics(self, camera: &'static str) -> Result<CameraIntrinsics, CalibrationError> {
        if self.distortion.iter().any(|&d| d != 0.0) {
            return Err(CalibrationError::Distortion { camera });
        }
        Ok(CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?)
    }

    fn from_intrinsics(k: &CameraIntrinsics) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy, width: k.width, height: k.height, distortion: vec![0.0; 5] }
    }
}

impl TransformRecord {
    fn into_transform(self) -> Result<RigidTransform, CalibrationError> {
        let r = Matrix3::from_row_slice(&self.rotation);
        Ok(RigidTransform::new(r, Vector3::from(self.translation))?)
    }

    fn from_transform(t: &RigidTransform) -> Self {
        let r = t.rotation();
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[3 * i + j] = r[(i, j)];
            }
        }
        let tr = t.translation();
        Self { rotation, translation: [tr.x, tr.y, tr.z] }
    }
}

impl Calibration {
    pub fn parse(text: &str) -> Result<Self, CalibrationError> {
        let rec: CalibrationRecord = toml::from_str(text).map_err(|e| CalibrationError::Parse(e.to_string()))?;
        if rec.version != CALIBRATION_VERSION {
            return Err(CalibrationError::Version(rec.version));
        }
        let left = rec.left.into_intrinsics("left")?;
        let right = rec.right.into_intrinsics("right")?;
        let rig = StereoRig::new(left, right, rec.left_to_right.into_transform()?)?;
        Ok(Self { rig, hand_eye: rec.hand_eye.into_transform()? })
    }

    pub fn to_toml(&self) -> String {
        let rec = CalibrationRecord {
            version: CALIBRATION_VERSION,
            left: CameraRecord::from_intrinsics(&self.rig.left),
            right: CameraRecord::from_intrinsics(&self.rig.right),
            left_to_right: TransformRecord::from_transform(&self.rig.t_left_right),
            hand_eye: TransformRecord::from_transform(&self.hand_eye),
        };
        toml::to_string(&rec).expect("calibration record serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CalibrationError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}

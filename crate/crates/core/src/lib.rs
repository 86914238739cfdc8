//! Multi-view keypoint labeling, target generation and 3D keypoint tracking.

pub mod calibration;
pub mod dataset;
pub mod eval;
pub mod extraction;
pub mod geometry;
pub mod losses;
pub mod mono;
pub mod results;
pub mod sim;
pub mod stereo;
pub mod targets;
pub mod tensor;

//! Single-view lifting with per-keypoint depth maps: `X = K⁻¹ x ẑ`.

use nalgebra::{Vector2, Vector3};
use ndarray::Array3;
use thiserror::Error;

use crate::extraction::{associate_to_objects, extract_keypoints, Detection2D, FrameMaps, WINDOW_RADIUS};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::stereo::{Keypoint3D, Provenance, TrackedObject3D, TrackingParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonoError {
    #[error("no depth support around channel {channel} peak ({row}, {col})")]
    NoDepth { channel: usize, row: usize, col: usize },
    #[error("frame has no depth maps")]
    MissingDepthMaps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthReadout {
    /// Meters along the camera z axis.
    pub z_hat: f64,
    /// Number of pixels that contributed.
    pub support_px: usize,
}

/// Heatmap-weighted mean of nonzero depth values in the 5x5 window at the
/// detection peak. Falls back to a plain mean when the heatmap carries no
/// weight on the depth support.
pub fn read_depth(depth: &Array3<f64>, heatmaps: &Array3<f64>, det: &Detection2D) -> Result<DepthReadout, MonoError> {
    let (_, height, width) = depth.dim();
    let (row, col) = det.peak;
    let c = det.channel;
    let rows = row.saturating_sub(WINDOW_RADIUS)..=(row + WINDOW_RADIUS).min(height - 1);
    let (mut wsum, mut wz, mut plain, mut n) = (0.0, 0.0, 0.0, 0usize);
    for i in rows {
        for j in col.saturating_sub(WINDOW_RADIUS)..=(col + WINDOW_RADIUS).min(width - 1) {
            let z = depth[[c, i, j]];
            if z > 0.0 && z.is_finite() {
                let w = heatmaps[[c, i, j]].max(0.0);
                wsum += w;
                wz += w * z;
                plain += z;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(MonoError::NoDepth { channel: c, row, col });
    }
    let z_hat = if wsum > 0.0 { wz / wsum } else { plain / n as f64 };
    Ok(DepthReadout { z_hat, support_px: n })
}

/// Camera-frame point `K⁻¹ [x, 1] ẑ`, mapped to the base frame by `camera_in_base`.
pub fn lift_mono(k: &CameraIntrinsics, x: &Vector2<f64>, z_hat: f64, camera_in_base: &RigidTransform) -> Vector3<f64> {
    let camera = k.inverse_matrix() * Vector3::new(x.x, x.y, 1.0) * z_hat;
    camera_in_base.transform_point(&camera)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonoFrameResult {
    pub objects: Vec<TrackedObject3D>,
    /// Detections kept as 2D only because no depth could be read.
    pub without_depth: usize,
    pub orphan_keypoints: usize,
}

/// Extraction, grouping and per-keypoint depth lifting for one image.
pub fn run_mono_frame(maps: &FrameMaps, k: &CameraIntrinsics, camera_in_base: &RigidTransform, params: &TrackingParams) -> Result<MonoFrameResult, MonoError> {
    let depth = maps.depth.as_ref().ok_or(MonoError::MissingDepthMaps)?;
    let detections = extract_keypoints(&maps.heatmaps, &maps.center_field, &maps.mapping, params.threshold);
    let groups = associate_to_objects(&detections, params.center_channel, params.gating_radius);

    let lift = |d: &Detection2D| -> Result<Vector3<f64>, MonoError> {
        let z = read_depth(depth, &maps.heatmaps, d)?;
        Ok(lift_mono(k, &d.image_position, z.z_hat, camera_in_base))
    };

    let mut result = MonoFrameResult { orphan_keypoints: groups.orphans.len(), ..Default::default() };
    for object in &groups.objects {
        let center = match lift(&object.center) {
            Ok(x) => x,
            Err(_) => {
                result.without_depth += 1 + object.keypoints.len();
                continue;
            }
        };
        let mut keypoints = Vec::with_capacity(object.keypoints.len());
        for d in &object.keypoints {
            match lift(d) {
                Ok(position) => keypoints.push(Keypoint3D { channel: d.channel, position, provenance: Provenance::Mono }),
                Err(_) => result.without_depth += 1,
            }
        }
        result.objects.push(TrackedObject3D { center, keypoints });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn det(peak: (usize, usize)) -> Detection2D {
        Detection2D {
            channel: 0,
            peak,
            position: Vector2::new(peak.1 as f64, peak.0 as f64),
            score: 1.0,
            center_vote: Vector2::zeros(),
            image_position: Vector2::zeros(),
        }
    }

    #[test]
    fn uniform_disk_reads_exactly() {
        let mut depth = Array3::zeros((1, 16, 16));
        let mut heat = Array3::zeros((1, 16, 16));
        for i in 5..12 {
            for j in 5..12 {
                depth[[0, i, j]] = 0.62;
                heat[[0, i, j]] = 1.0 / (1.0 + ((i as f64 - 8.0).powi(2) + (j as f64 - 8.0).powi(2)));
            }
        }
        let r = read_depth(&depth, &heat, &det((8, 8))).unwrap();
        assert_eq!(r.z_hat, 0.62);
        assert_eq!(r.support_px, 25);
    }

    #[test]
    fn zero_depth_window_is_an_error() {
        let depth = Array3::zeros((1, 16, 16));
        let heat = Array3::from_elem((1, 16, 16), 0.5);
        assert_eq!(read_depth(&depth, &heat, &det((3, 4))), Err(MonoError::NoDepth { channel: 0, row: 3, col: 4 }));
    }

    #[test]
    fn principal_point_lifts_onto_axis() {
        let k = CameraIntrinsics::new(700.0, 700.0, 640.0, 360.0, 1280, 720).unwrap();
        let x = lift_mono(&k, &Vector2::new(640.0, 360.0), 1.0, &RigidTransform::identity());
        assert_relative_eq!(x, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn lift_inverts_projection() {
        let k = CameraIntrinsics::new(612.0, 608.0, 630.0, 355.0, 1280, 720).unwrap();
        let pose = crate::geometry::look_at(&Vector3::new(0.5, -0.4, 0.6), &Vector3::zeros(), &Vector3::z()).unwrap();
        let x = Vector3::new(0.15, 0.05, 0.2);
        let cam = pose.inverse().transform_point(&x);
        let px = k.project_camera_point(&cam).unwrap();
        let back = lift_mono(&k, &px, cam.z, &pose);
        assert!((back - x).norm() < 1e-9);
    }
}

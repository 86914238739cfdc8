//! Left/right association with epipolar gating and DLT lifting.

use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::extraction::{associate_to_objects, extract_keypoints, Association, Detection2D, FrameMaps};
use crate::geometry::{epipolar_residual, triangulate_dlt, GeometryError, ProjectionMatrix, RigidTransform, StereoRig};

pub const DEFAULT_EPIPOLAR_CUTOFF: f64 = 32.0;
/// Depth of the reference point used for the disparity shift, meters.
pub const SHIFT_DEPTH: f64 = 0.60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoMatch {
    pub left: Detection2D,
    pub right: Detection2D,
    pub epipolar_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Stereo,
    Mono,
}

impl Provenance {
    pub fn tag(self) -> char {
        match self {
            Provenance::Stereo => 's',
            Provenance::Mono => 'm',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint3D {
    pub channel: usize,
    /// Base frame, meters.
    pub position: Vector3<f64>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject3D {
    /// Base frame, meters.
    pub center: Vector3<f64>,
    pub keypoints: Vec<Keypoint3D>,
}

/// Thresholds shared by both tracking pipelines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingParams {
    pub threshold: f64,
    pub gating_radius: f64,
    pub epipolar_cutoff: f64,
    pub center_channel: usize,
}

impl TrackingParams {
    pub fn new(center_channel: usize) -> Self {
        Self {
            threshold: crate::extraction::DEFAULT_THRESHOLD,
            gating_radius: crate::extraction::DEFAULT_GATING_RADIUS,
            epipolar_cutoff: DEFAULT_EPIPOLAR_CUTOFF,
            center_channel,
        }
    }
}

/// Pixel offset between the projections of a point [`SHIFT_DEPTH`] in front
/// of the left camera into the right and left images. `None` when the point
/// does not land inside both images.
pub fn disparity_shift(rig: &StereoRig) -> Option<Vector2<f64>> {
    let point_left = Vector3::new(0.0, 0.0, SHIFT_DEPTH);
    let point_right = rig.t_left_right.inverse().transform_point(&point_left);
    let xl = rig.left.project_camera_point(&point_left).ok()?;
    let xr = rig.right.project_camera_point(&point_right).ok()?;
    (rig.left.contains(&xl) && rig.right.contains(&xr)).then(|| xr - xl)
}

/// Associates left detections with right detections of the same channel.
///
/// Candidates are gated by `|x'ᵀFx| < cutoff` in full-image pixels. A left
/// detection with several candidates prefers the one nearest to its position
/// shifted by [`disparity_shift`]. One-to-one assignment proceeds in rounds:
/// each unmatched left detection proposes its best remaining candidate and a
/// free right detection accepts the proposal with the smallest residual.
pub fn match_left_right(left: &[Detection2D], right: &[Detection2D], f: &Matrix3<f64>, rig: &StereoRig, cutoff: f64) -> Vec<StereoMatch> {
    let shift = disparity_shift(rig);

    // Per left detection: candidate right indices in preference order.
    let mut candidates: Vec<Vec<(usize, f64)>> = left
        .iter()
        .map(|l| {
            let mut c: Vec<(usize, f64, f64)> = right
                .iter()
                .enumerate()
                .filter(|(_, r)| r.channel == l.channel)
                .map(|(j, r)| (j, epipolar_residual(f, &l.image_position, &r.image_position)))
                .filter(|(_, res)| res.abs() < cutoff)
                .map(|(j, res)| {
                    let key = match shift {
                        Some(s) => (right[j].image_position - (l.image_position + s)).norm(),
                        None => res.abs(),
                    };
                    (j, res, key)
                })
                .collect();
            c.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.1.abs().total_cmp(&b.1.abs())).then(a.0.cmp(&b.0)));
            // Reverse so the preferred candidate can be popped.
            c.into_iter().rev().map(|(j, res, _)| (j, res)).collect()
        })
        .collect();

    let mut left_match: Vec<Option<(usize, f64)>> = vec![None; left.len()];
    let mut right_taken = vec![false; right.len()];
    loop {
        // (right index, left index, residual)
        let mut proposals: Vec<(usize, usize, f64)> = Vec::new();
        for (i, cands) in candidates.iter_mut().enumerate() {
            if left_match[i].is_some() {
                continue;
            }
            while let Some(&(j, res)) = cands.last() {
                if right_taken[j] {
                    cands.pop();
                    continue;
                }
                proposals.push((j, i, res));
                break;
            }
        }
        if proposals.is_empty() {
            break;
        }
        proposals.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.abs().total_cmp(&b.2.abs())).then(a.1.cmp(&b.1)));
        for (j, i, res) in proposals {
            if right_taken[j] {
                candidates[i].pop();
                continue;
            }
            right_taken[j] = true;
            left_match[i] = Some((j, res));
            candidates[i].pop();
        }
    }

    left_match
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|(j, res)| StereoMatch { left: left[i], right: right[j], epipolar_residual: res }))
        .collect()
}

/// Triangulates every match with the two projection matrices.
pub fn lift_stereo(matches: &[StereoMatch], left_p: &ProjectionMatrix, right_p: &ProjectionMatrix) -> Vec<Result<Vector3<f64>, GeometryError>> {
    matches
        .iter()
        .map(|m| triangulate_dlt(&[(*left_p, m.left.image_position), (*right_p, m.right.image_position)]))
        .collect()
}

/// Wall-clock time spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub extraction: Duration,
    pub object_association: Duration,
    pub lr_association: Duration,
    pub triangulation: Duration,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.extraction += o.extraction;
        self.object_association += o.object_association;
        self.lr_association += o.lr_association;
        self.triangulation += o.triangulation;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StereoFrameResult {
    pub objects: Vec<TrackedObject3D>,
    pub unmatched_keypoints: usize,
    pub orphan_keypoints: usize,
    pub failed_triangulations: usize,
    pub timings: StageTimings,
}

/// Camera poses of one stereo frame, camera-in-base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoPoses {
    pub left: RigidTransform,
    pub right: RigidTransform,
}

/// Extraction, per-image grouping, object-level then keypoint-level
/// left/right association, and triangulation into the base frame.
pub fn run_stereo_frame(left_maps: &FrameMaps, right_maps: &FrameMaps, rig: &StereoRig, poses: &StereoPoses, params: &TrackingParams) -> StereoFrameResult {
    let f = match crate::geometry::fundamental_matrix(rig) {
        Ok(f) => f,
        Err(_) => return StereoFrameResult::default(),
    };
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let left_dets = extract_keypoints(&left_maps.heatmaps, &left_maps.center_field, &left_maps.mapping, params.threshold);
    let right_dets = extract_keypoints(&right_maps.heatmaps, &right_maps.center_field, &right_maps.mapping, params.threshold);
    timings.extraction = t.elapsed();

    let t = Instant::now();
    let left_groups = associate_to_objects(&left_dets, params.center_channel, params.gating_radius);
    let right_groups = associate_to_objects(&right_dets, params.center_channel, params.gating_radius);
    timings.object_association = t.elapsed();

    let t = Instant::now();
    let pairs = pair_objects(&left_groups, &right_groups, &f, rig, params.epipolar_cutoff);
    timings.lr_association = t.elapsed();

    let t = Instant::now();
    let left_p = ProjectionMatrix::from_camera(&rig.left, &poses.left);
    let right_p = ProjectionMatrix::from_camera(&rig.right, &poses.right);
    let base_to_left = poses.left.inverse();
    let in_front = |x: &Vector3<f64>| base_to_left.transform_point(x).z > 0.0 && x.iter().all(|v| v.is_finite());

    let mut result = StereoFrameResult {
        orphan_keypoints: left_groups.orphans.len() + right_groups.orphans.len(),
        ..Default::default()
    };
    for pair in &pairs {
        let center = match lift_stereo(std::slice::from_ref(&pair.center), &left_p, &right_p).remove(0) {
            Ok(x) if in_front(&x) => x,
            _ => {
                result.failed_triangulations += 1;
                continue;
            }
        };
        let mut keypoints = Vec::with_capacity(pair.keypoints.len());
        for (m, x) in pair.keypoints.iter().zip(lift_stereo(&pair.keypoints, &left_p, &right_p)) {
            match x {
                Ok(x) if in_front(&x) => keypoints.push(Keypoint3D { channel: m.left.channel, position: x, provenance: Provenance::Stereo }),
                _ => result.failed_triangulations += 1,
            }
        }
        result.unmatched_keypoints += pair.unmatched;
        result.objects.push(TrackedObject3D { center, keypoints });
    }
    timings.triangulation = t.elapsed();
    result.timings = timings;
    result
}

/// Left/right object pair with its matched member keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPair {
    pub center: StereoMatch,
    pub keypoints: Vec<StereoMatch>,
    /// Member keypoints of the left object without a right partner.
    pub unmatched: usize,
}

/// Matches object centers first, then member keypoints within each pair.
pub fn pair_objects(left: &Association, right: &Association, f: &Matrix3<f64>, rig: &StereoRig, cutoff: f64) -> Vec<ObjectPair> {
    let left_centers: Vec<Detection2D> = left.objects.iter().map(|o| o.center).collect();
    let right_centers: Vec<Detection2D> = right.objects.iter().map(|o| o.center).collect();
    let center_matches = match_left_right(&left_centers, &right_centers, f, rig, cutoff);

    center_matches
        .into_iter()
        .map(|cm| {
            let lo = left.objects.iter().find(|o| o.center == cm.left).expect("center comes from left objects");
            let ro = right.objects.iter().find(|o| o.center == cm.right).expect("center comes from right objects");
            let keypoints = match_left_right(&lo.keypoints, &ro.keypoints, f, rig, cutoff);
            let unmatched = lo.keypoints.len() - keypoints.len();
            ObjectPair { center: cm, keypoints, unmatched }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fundamental_matrix, CameraIntrinsics};
    use nalgebra::Rotation3;

    fn rig() -> StereoRig {
        let k = CameraIntrinsics::new(700.0, 700.0, 640.0, 360.0, 1280, 720).unwrap();
        StereoRig::new(k, k, RigidTransform::from_rotation(&Rotation3::identity(), Vector3::new(0.063, 0.0, 0.0))).unwrap()
    }

    fn det_at(channel: usize, image: Vector2<f64>) -> Detection2D {
        Detection2D { channel, peak: (0, 0), position: Vector2::zeros(), score: 1.0, center_vote: Vector2::zeros(), image_position: image }
    }

    fn project_pair(rig: &StereoRig, x: Vector3<f64>) -> (Vector2<f64>, Vector2<f64>) {
        let l = rig.left.project_camera_point(&x).unwrap();
        let r = rig.right.project_camera_point(&rig.t_left_right.inverse().transform_point(&x)).unwrap();
        (l, r)
    }

    #[test]
    fn shift_matches_point_at_sixty_centimeters() {
        let s = disparity_shift(&rig()).unwrap();
        assert!((s.x + 700.0 * 0.063 / 0.6).abs() < 1e-9);
        assert!(s.y.abs() < 1e-12);
    }

    #[test]
    fn empty_right_gives_no_matches() {
        let r = rig();
        let f = fundamental_matrix(&r).unwrap();
        let left = [det_at(0, Vector2::new(600.0, 300.0))];
        assert!(match_left_right(&left, &[], &f, &r, DEFAULT_EPIPOLAR_CUTOFF).is_empty());
    }

    #[test]
    fn channels_must_agree() {
        let r = rig();
        let f = fundamental_matrix(&r).unwrap();
        let (l, rr) = project_pair(&r, Vector3::new(0.0, 0.0, 0.6));
        assert!(match_left_right(&[det_at(0, l)], &[det_at(1, rr)], &f, &r, DEFAULT_EPIPOLAR_CUTOFF).is_empty());
        assert_eq!(match_left_right(&[det_at(1, l)], &[det_at(1, rr)], &f, &r, DEFAULT_EPIPOLAR_CUTOFF).len(), 1);
    }

    #[test]
    fn shift_disambiguates_points_on_one_epipolar_line() {
        let r = rig();
        let f = fundamental_matrix(&r).unwrap();
        // Same image row, depths 0.4 m and 0.9 m.
        let near = Vector3::new(-0.05, 0.02, 0.4);
        let far = Vector3::new(0.04 * 0.9 / 0.4, 0.02 * 0.9 / 0.4, 0.9);
        let (l1, r1) = project_pair(&r, near);
        let (l2, r2) = project_pair(&r, far);
        assert!((l1.y - l2.y).abs() < 1e-9);
        let left = [det_at(0, l1), det_at(0, l2)];
        let right = [det_at(0, r2), det_at(0, r1)];
        let m = match_left_right(&left, &right, &f, &r, DEFAULT_EPIPOLAR_CUTOFF);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].right.image_position, r1);
        assert_eq!(m[1].right.image_position, r2);
        for x in &m {
            assert!(x.epipolar_residual.abs() < 1e-6);
        }
    }

    #[test]
    fn gating_rejects_far_rows() {
        let r = rig();
        let f = fundamental_matrix(&r).unwrap();
        let (l, rr) = project_pair(&r, Vector3::new(0.0, 0.0, 0.6));
        let off = rr + Vector2::new(0.0, 40.0);
        assert!(match_left_right(&[det_at(0, l)], &[det_at(0, off)], &f, &r, DEFAULT_EPIPOLAR_CUTOFF).is_empty());
    }

    #[test]
    fn one_to_one_conflicts_resolved_by_residual() {
        let r = rig();
        let f = fundamental_matrix(&r).unwrap();
        let (l, rr) = project_pair(&r, Vector3::new(0.0, 0.0, 0.6));
        // Two left points compete for the single right point; the one on the epipolar line wins.
        let left = [det_at(0, l + Vector2::new(0.0, 10.0)), det_at(0, l)];
        let m = match_left_right(&left, &[det_at(0, rr)], &f, &r, DEFAULT_EPIPOLAR_CUTOFF);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].left.image_position, l);
    }
}

//! Labeling sessions: the frame pair, the pending submission and the
//! committed objects of one sequence.

use std::path::{Path, PathBuf};

use kptk_core::dataset::{labels_to_json, project_instance, ranked_view_pairs, write_atomic, Camera, DatasetError, Label2D, ObjectInstance, SequenceDataset, ViewPair};
use kptk_core::geometry::{triangulate_dlt, ProjectionMatrix};
use kptk_core::targets::CategorySpec;
use log::warn;
use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::protocol::{
    pose_array, Backprojection, FramePoses, KeypointResult, PairInfo, PairResponse, ProjectedPoint, Slot, SubmitRequest, SubmitResponse, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u32),
    #[error("{0}")]
    Conflict(String),
    #[error("clicks_a has {a} entries, clicks_b has {b}, keypoint_types has {types}")]
    MismatchedClicks { a: usize, b: usize, types: usize },
    #[error("{failed} of {total} keypoints could not be triangulated")]
    Triangulation { failed: usize, total: usize, keypoints: Vec<KeypointResult> },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::UnsupportedVersion(_) => "unsupported_version",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::MismatchedClicks { .. } => "mismatched_clicks",
            ServiceError::Triangulation { .. } => "triangulation_failed",
            ServiceError::Dataset(_) => "dataset",
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    instance: ObjectInstance,
}

#[derive(Debug)]
pub struct Session {
    pub id: u64,
    pub writable: bool,
    dir: PathBuf,
    seq: SequenceDataset,
    ranked: Vec<ViewPair>,
    pair: ViewPair,
    /// Frames shown in each slot since the last wrap-around.
    shown: [Vec<usize>; 2],
    pending: Option<Pending>,
}

fn merge_categories(existing: &mut Vec<CategorySpec>, extra: &[CategorySpec]) -> Result<(), ServiceError> {
    for c in extra {
        c.validate().map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        match existing.iter().find(|e| e.name == c.name) {
            Some(e) if e != c => return Err(ServiceError::Conflict(format!("category '{}' differs from the one stored with the sequence", c.name))),
            Some(_) => {}
            None => existing.push(c.clone()),
        }
    }
    Ok(())
}

fn to_wire(spec: &CategorySpec, labels: &[Label2D]) -> Vec<ProjectedPoint> {
    labels
        .iter()
        .map(|l| ProjectedPoint {
            channel: l.channel,
            keypoint_type: spec.keypoint_types.get(l.channel).cloned().unwrap_or_else(|| "center".into()),
            position: l.position.map(|p| [p.x, p.y]),
            visible: l.visible,
        })
        .collect()
}

impl Session {
    /// Loads the sequence in `dir`; committed objects come from its labels file.
    pub fn open(id: u64, dir: &Path, extra_categories: &[CategorySpec], writable: bool) -> Result<Self, ServiceError> {
        let mut seq = SequenceDataset::load(dir)?;
        merge_categories(&mut seq.categories, extra_categories)?;
        let ranked = ranked_view_pairs(&seq)?;
        let pair = ranked[0];
        if pair.abs_cos > 0.999 {
            warn!("sequence '{}': best labeling pair is nearly parallel (|cos| = {:.4})", seq.id, pair.abs_cos);
        }
        Ok(Self { id, writable, dir: dir.to_path_buf(), seq, ranked, pair, shown: [vec![pair.a], vec![pair.b]], pending: None })
    }

    pub fn sequence(&self) -> &SequenceDataset {
        &self.seq
    }

    pub fn pair(&self) -> PairInfo {
        PairInfo { a: self.pair.a, b: self.pair.b, abs_cos: self.pair.abs_cos }
    }

    pub fn frame_poses(&self, frame: usize) -> FramePoses {
        let f = &self.seq.frames[frame];
        FramePoses { frame, left: pose_array(&f.left_pose), right: pose_array(&f.right_pose) }
    }

    pub fn pair_response(&self, warning: Option<String>) -> PairResponse {
        PairResponse { version: PROTOCOL_VERSION, pair: self.pair(), poses: [self.frame_poses(self.pair.a), self.frame_poses(self.pair.b)], warning }
    }

    /// Replaces the frame in `slot` with the most orthogonal partner of the
    /// other frame not yet shown in that slot. Once every partner has been
    /// shown the cycle restarts and a warning is returned.
    pub fn swap(&mut self, slot: Slot) -> Option<String> {
        let (idx, fixed, current) = match slot {
            Slot::A => (0, self.pair.b, self.pair.a),
            Slot::B => (1, self.pair.a, self.pair.b),
        };
        let partners: Vec<(usize, f64)> = self
            .ranked
            .iter()
            .filter_map(|p| match (p.a == fixed, p.b == fixed) {
                (true, _) => Some((p.b, p.abs_cos)),
                (_, true) => Some((p.a, p.abs_cos)),
                _ => None,
            })
            .collect();
        let mut warning = None;
        let next = match partners.iter().find(|(f, _)| !self.shown[idx].contains(f)) {
            Some(&n) => n,
            None => {
                let msg = format!("all {} partners of frame {fixed} have been shown; starting over", partners.len());
                warn!("session {}: {msg}", self.id);
                warning = Some(msg);
                self.shown[idx].clear();
                partners.iter().copied().find(|(f, _)| *f != current).or_else(|| partners.first().copied()).unwrap_or((current, self.pair.abs_cos))
            }
        };
        self.shown[idx].push(next.0);
        self.pair = match slot {
            Slot::A => ViewPair { a: next.0, b: fixed, abs_cos: next.1 },
            Slot::B => ViewPair { a: fixed, b: next.0, abs_cos: next.1 },
        };
        self.pending = None;
        warning
    }

    fn check_frames(&self, frames: &[usize]) -> Result<(), ServiceError> {
        match frames.iter().find(|&&f| f >= self.seq.frames.len()) {
            Some(f) => Err(ServiceError::NotFound(format!("frame {f} out of range (sequence has {})", self.seq.frames.len()))),
            None => Ok(()),
        }
    }

    fn backprojections(&self, instance: &ObjectInstance, frames: &[usize]) -> Result<Vec<Backprojection>, ServiceError> {
        self.check_frames(frames)?;
        let spec = self.seq.category(&instance.category)?;
        frames
            .iter()
            .map(|&f| {
                Ok(Backprojection {
                    frame: f,
                    left: to_wire(spec, &project_instance(&self.seq, instance, f, Camera::Left)?),
                    right: to_wire(spec, &project_instance(&self.seq, instance, f, Camera::Right)?),
                })
            })
            .collect()
    }

    /// Triangulates one object from the clicks in the current pair and
    /// keeps it as the pending submission. Any keypoint that cannot be
    /// triangulated fails the whole submission.
    pub fn submit(&mut self, req: &SubmitRequest) -> Result<SubmitResponse, ServiceError> {
        self.pending = None;
        let n = req.keypoint_types.len();
        if req.clicks_a.len() != n || req.clicks_b.len() != n {
            return Err(ServiceError::MismatchedClicks { a: req.clicks_a.len(), b: req.clicks_b.len(), types: n });
        }
        if n == 0 {
            return Err(ServiceError::BadRequest("no clicks submitted".into()));
        }
        let spec = self.seq.category(&req.category).map_err(|_| ServiceError::NotFound(format!("unknown category '{}'", req.category)))?.clone();
        let pa = self.seq.projection(self.pair.a, Camera::Left)?;
        let pb = self.seq.projection(self.pair.b, Camera::Left)?;

        let mut results = Vec::with_capacity(n);
        let mut keypoints = vec![Vec::new(); spec.keypoint_types.len()];
        for (index, name) in req.keypoint_types.iter().enumerate() {
            let Some(channel) = spec.keypoint_types.iter().position(|t| t == name) else {
                return Err(ServiceError::BadRequest(format!("category '{}' has no keypoint type '{name}'", spec.name)));
            };
            let a = Vector2::from(req.clicks_a[index]);
            let b = Vector2::from(req.clicks_b[index]);
            let mut r = KeypointResult { index, keypoint_type: name.clone(), channel, point: None, residual_a: None, residual_b: None, error: None };
            match triangulate(&pa, &pb, &a, &b) {
                Ok((x, ra, rb)) => {
                    r.point = Some([x.x, x.y, x.z]);
                    r.residual_a = Some(ra);
                    r.residual_b = Some(rb);
                    keypoints[channel].push(x);
                }
                Err(e) => r.error = Some(e),
            }
            results.push(r);
        }
        let failed = results.iter().filter(|r| r.error.is_some()).count();
        if failed > 0 {
            return Err(ServiceError::Triangulation { failed, total: n, keypoints: results });
        }

        let instance = ObjectInstance { category: spec.name.clone(), keypoints };
        let frames = req.frames.clone().unwrap_or_else(|| vec![self.pair.a, self.pair.b]);
        let backprojections = self.backprojections(&instance, &frames)?;
        let c = instance.center();
        self.pending = Some(Pending { instance });
        Ok(SubmitResponse { version: PROTOCOL_VERSION, keypoints: results, center: [c.x, c.y, c.z], backprojections })
    }

    pub fn backproject(&self, frames: &[usize], object: Option<usize>) -> Result<Vec<Backprojection>, ServiceError> {
        let instance = match object {
            Some(i) => self.seq.labels.get(i).ok_or_else(|| ServiceError::NotFound(format!("no committed object {i}")))?,
            None => &self.pending.as_ref().ok_or_else(|| ServiceError::Conflict("no pending submission".into()))?.instance,
        };
        self.backprojections(instance, frames)
    }

    /// Appends the pending object to the labels file, written atomically.
    /// Returns the number of committed objects and the new object's center.
    pub fn commit(&mut self) -> Result<(usize, Vector3<f64>), ServiceError> {
        if !self.writable {
            return Err(ServiceError::Conflict(format!("sequence '{}' is open for writing in another session", self.seq.id)));
        }
        let pending = self.pending.take().ok_or_else(|| ServiceError::Conflict("no pending submission".into()))?;
        let center = pending.instance.center();
        let mut labels = self.seq.labels.clone();
        labels.push(pending.instance);
        write_atomic(&self.dir.join("labels.json"), labels_to_json(&self.seq.categories, &labels).as_bytes())?;
        self.seq.labels = labels;
        Ok((self.seq.labels.len(), center))
    }

    pub fn committed(&self) -> usize {
        self.seq.labels.len()
    }
}

/// DLT point and reprojection residuals in both views, or a reason the
/// keypoint cannot be placed.
fn triangulate(pa: &ProjectionMatrix, pb: &ProjectionMatrix, a: &Vector2<f64>, b: &Vector2<f64>) -> Result<(Vector3<f64>, f64, f64), String> {
    if !(a.iter().chain(b.iter()).all(|v| v.is_finite())) {
        return Err("click is not finite".into());
    }
    let x = triangulate_dlt(&[(*pa, *a), (*pb, *b)]).map_err(|e| e.to_string())?;
    let ra = pa.project(&x).map_err(|_| "triangulated point is behind camera a".to_string())?;
    let rb = pb.project(&x).map_err(|_| "triangulated point is behind camera b".to_string())?;
    Ok((x, (ra - a).norm(), (rb - b).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use kptk_core::sim::{sequence_rng, simulate_sequence, SimConfig, SyntheticScene};
    use kptk_core::dataset::Split;

    fn session(frames: f64) -> (tempfile::TempDir, Session) {
        let mut rng = sequence_rng(3, 0);
        let scene = SyntheticScene::valve(&mut rng);
        let seq = simulate_sequence(&scene, &SimConfig { duration: frames / 14.5, ..SimConfig::default() }, "v", Split::Train, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        seq.save(dir.path()).unwrap();
        let s = Session::open(1, dir.path(), &[], true).unwrap();
        (dir, s)
    }

    #[test]
    fn swaps_visit_every_partner_once_then_wrap() {
        let (_dir, mut s) = session(6.0);
        let n = s.sequence().frames.len();
        let fixed = s.pair().b;
        let mut seen = vec![s.pair().a];
        for _ in 0..n - 2 {
            assert!(s.swap(Slot::A).is_none());
            assert_eq!(s.pair().b, fixed);
            assert!(!seen.contains(&s.pair().a));
            seen.push(s.pair().a);
        }
        assert!(s.swap(Slot::A).is_some());
        assert_ne!(s.pair().a, fixed);
    }

    #[test]
    fn swap_order_is_by_decreasing_orthogonality() {
        let (_dir, mut s) = session(20.0);
        let mut prev = s.pair().abs_cos;
        for _ in 0..10 {
            s.swap(Slot::B);
            assert!(s.pair().abs_cos >= prev);
            prev = s.pair().abs_cos;
        }
    }

    #[test]
    fn mismatched_click_counts_are_rejected() {
        let (_dir, mut s) = session(6.0);
        let req = SubmitRequest { version: 1, category: "valve".into(), keypoint_types: vec!["hub".into()], clicks_a: vec![[1.0, 2.0]], clicks_b: vec![], frames: None };
        assert!(matches!(s.submit(&req), Err(ServiceError::MismatchedClicks { a: 1, b: 0, types: 1 })));
    }

    #[test]
    fn commit_requires_a_pending_submission() {
        let (_dir, mut s) = session(6.0);
        assert!(matches!(s.commit(), Err(ServiceError::Conflict(_))));
    }
}

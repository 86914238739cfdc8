//! Pinhole cameras, rigid transforms, projection and two-view geometry.
//!
//! Conventions:
//! - Camera frames are z forward, y down, x to the right of the image.
//! - Poses are stored camera-in-base (`T_BC`): `x_base = R * x_cam + t`.
//! - Pixel coordinates are continuous with the origin at the top-left corner.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Rotation3, UnitQuaternion, Vector2, Vector3, Vector4};
use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("stereo rig has zero baseline; fundamental matrix is undefined")]
    ZeroBaseline,
    #[error("need at least two observations, got {0}")]
    TooFewObservations(usize),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("projection matrix has a singular left 3x3 block")]
    SingularProjection,
}

/// The point lies on or behind the image plane of the camera.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("point is behind the camera")]
pub struct Behind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(cx > 0.0 && cx < f64::from(width) && cy > 0.0 && cy < f64::from(height)) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside sensor {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    /// Upper-triangular camera matrix `K`.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point. Returns [`Behind`] when `z <= 0`.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, Behind> {
        if p.z <= 0.0 {
            return Err(Behind);
        }
        Ok(Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// True when the pixel lies inside the sensor area `[0, width) x [0, height)`.
    pub fn contains(&self, x: &Vector2<f64>) -> bool {
        x.x >= 0.0 && x.y >= 0.0 && x.x < f64::from(self.width) && x.y < f64::from(self.height)
    }
}

/// A proper rigid-body transform (rotation + translation in meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let deviation = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det_err = (rotation.determinant() - 1.0).abs();
        let worst = deviation.max(det_err);
        if !worst.is_finite() || worst > ROTATION_TOLERANCE || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotOrthonormal(worst));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_rotation(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: *rotation.matrix(), translation }
    }

    pub fn from_quaternion(rotation: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::from_rotation(&rotation.to_rotation_matrix(), translation)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Optical axis (third rotation column) expressed in the parent frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub left: CameraIntrinsics,
    pub right: CameraIntrinsics,
    /// Pose of the right camera expressed in the left camera frame.
    pub t_left_right: RigidTransform,
}

impl StereoRig {
    pub fn new(left: CameraIntrinsics, right: CameraIntrinsics, t_left_right: RigidTransform) -> Result<Self, GeometryError> {
        if t_left_right.translation().norm() <= 0.0 {
            return Err(GeometryError::ZeroBaseline);
        }
        Ok(Self { left, right, t_left_right })
    }

    pub fn baseline(&self) -> f64 {
        self.t_left_right.translation().norm()
    }

    /// Right camera pose in the base frame given the left camera pose.
    pub fn right_pose(&self, left_pose: &RigidTransform) -> RigidTransform {
        left_pose.compose(&self.t_left_right)
    }
}

/// 3x4 matrix `K [R | t]` mapping homogeneous base-frame points to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn new(m: Matrix3x4<f64>) -> Result<Self, GeometryError> {
        let block = m.fixed_view::<3, 3>(0, 0).into_owned();
        if block.try_inverse().is_none() || !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::SingularProjection);
        }
        Ok(Self(m))
    }

    /// Builds `P = K [R_CB | t_CB]` from a camera-in-base pose.
    pub fn from_camera(k: &CameraIntrinsics, camera_in_base: &RigidTransform) -> Self {
        let base_in_camera = camera_in_base.inverse();
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(base_in_camera.rotation());
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(base_in_camera.translation());
        Self(k.matrix() * rt)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Homogeneous projection with perspective divide.
    pub fn project(&self, x: &Vector3<f64>) -> Result<Vector2<f64>, Behind> {
        let h = self.0 * Vector4::new(x.x, x.y, x.z, 1.0);
        // Depth sign for a general P: sign(det M) * w.
        let det = self.0.fixed_view::<3, 3>(0, 0).determinant();
        if det.signum() * h.z <= 0.0 {
            return Err(Behind);
        }
        Ok(Vector2::new(h.x / h.z, h.y / h.z))
    }

    /// Camera center `C = -M^-1 p4`.
    pub fn center(&self) -> Vector3<f64> {
        let m = self.0.fixed_view::<3, 3>(0, 0).into_owned();
        let p4 = self.0.column(3).into_owned();
        // Invertibility is checked on construction.
        -(m.try_inverse().unwrap_or_else(Matrix3::zeros) * p4)
    }
}

/// Unit viewing ray through pixel `x` in the camera frame.
pub fn backproject_ray(k: &CameraIntrinsics, x: &Vector2<f64>) -> Vector3<f64> {
    let ray = Vector3::new((x.x - k.cx) / k.fx, (x.y - k.cy) / k.fy, 1.0);
    ray.normalize()
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix with `x_rightᵀ F x_left = 0` in raw homogeneous pixels.
///
/// The overall scale is fixed to a Frobenius norm of √2, so for a rectified
/// rig the residual `x'ᵀFx` equals the vertical pixel offset between the two
/// points.
pub fn fundamental_matrix(rig: &StereoRig) -> Result<Matrix3<f64>, GeometryError> {
    if rig.baseline() < 1e-12 {
        return Err(GeometryError::ZeroBaseline);
    }
    // Left camera frame -> right camera frame.
    let left_to_right = rig.t_left_right.inverse();
    let essential = skew(left_to_right.translation()) * left_to_right.rotation();
    let f = rig.right.inverse_matrix().transpose() * essential * rig.left.inverse_matrix();
    let norm = f.norm();
    if norm < 1e-300 {
        return Err(GeometryError::ZeroBaseline);
    }
    Ok(f * (std::f64::consts::SQRT_2 / norm))
}

/// Epipolar residual `x'ᵀ F x` for pixel coordinates with w = 1.
pub fn epipolar_residual(f: &Matrix3<f64>, left: &Vector2<f64>, right: &Vector2<f64>) -> f64 {
    let x = Vector3::new(left.x, left.y, 1.0);
    let xp = Vector3::new(right.x, right.y, 1.0);
    xp.dot(&(f * x))
}

/// Homogeneous DLT triangulation from two or more views.
///
/// Each view contributes the two independent rows of `x × (P X) = 0`. The
/// solution is the right singular vector of the smallest singular value,
/// dehomogenized by its fourth component.
pub fn triangulate_dlt(observations: &[(ProjectionMatrix, Vector2<f64>)]) -> Result<Vector3<f64>, GeometryError> {
    let n = observations.len();
    if n < 2 {
        return Err(GeometryError::TooFewObservations(n));
    }

    let centers: Vec<Vector3<f64>> = observations.iter().map(|(p, _)| p.center()).collect();
    let spread = centers
        .iter()
        .flat_map(|a| centers.iter().map(move |b| (a - b).norm()))
        .fold(0.0_f64, f64::max);
    if spread < 1e-9 {
        return Err(GeometryError::DegenerateGeometry("coincident projection centers"));
    }

    let mut a = DMatrix::<f64>::zeros(2 * n, 4);
    for (i, (p, x)) in observations.iter().enumerate() {
        let m = p.matrix();
        let r1 = m.row(0);
        let r2 = m.row(1);
        let r3 = m.row(2);
        a.row_mut(2 * i).copy_from(&(r3 * x.x - r1));
        a.row_mut(2 * i + 1).copy_from(&(r3 * x.y - r2));
    }

    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateGeometry("svd did not converge"))?;
    let sv = &svd.singular_values;
    let (min_idx, _) = sv
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.total_cmp(b))
        .ok_or(GeometryError::DegenerateGeometry("empty svd"))?;
    let largest = sv.max();
    let second_smallest = sv
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != min_idx)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if largest <= 0.0 || second_smallest <= 1e-12 * largest {
        return Err(GeometryError::DegenerateGeometry("rank-deficient DLT system"));
    }

    let h = v_t.row(min_idx);
    let h = Vector4::new(h[0], h[1], h[2], h[3]);
    let h = h / h.norm();
    if h.w.abs() < 1e-12 {
        return Err(GeometryError::DegenerateGeometry("point at infinity (parallel rays)"));
    }
    let x = Vector3::new(h.x / h.w, h.y / h.w, h.z / h.w);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::DegenerateGeometry("non-finite solution"));
    }
    Ok(x)
}

/// Camera-in-base pose at `eye` looking at `target`, with image y pointing
/// along `-up` as closely as possible.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<RigidTransform, GeometryError> {
    let z = target - eye;
    let z_norm = z.norm();
    if z_norm < 1e-12 {
        return Err(GeometryError::DegenerateGeometry("eye coincides with target"));
    }
    let z = z / z_norm;
    let x = z.cross(up);
    let x_norm = x.norm();
    if x_norm < 1e-9 {
        return Err(GeometryError::DegenerateGeometry("viewing direction parallel to up vector"));
    }
    let x = x / x_norm;
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    Ok(RigidTransform { rotation: r, translation: *eye })
}

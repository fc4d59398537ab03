//! Pinhole camera model, projection matrices and rotation utilities.
//!
//! Conventions used throughout the crate:
//!
//! * `R` maps world coordinates into the camera frame, `r` is the camera
//!   center in world coordinates, and `t = -R r`.
//! * `vec(.)` stacks columns (column-major), which is also nalgebra's
//!   storage order, so `vec(P)[0..9]` is the left 3x3 block of `P`.

use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};

/// Tolerance on `R^T R = I` and `det(R) = 1` accepted by [`Pose::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-12;

/// Pinhole calibration parameters, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let all_finite = [fx, fy, cx, cy, skew].iter().all(|v| v.is_finite());
        if !all_finite || fx <= 0.0 || fy <= 0.0 {
            return Err(Error::SingularCalibration);
        }
        Ok(Self { fx, fy, cx, cy, skew })
    }

    /// Builds intrinsics from an upper-triangular matrix, normalizing `K[2][2]` to 1.
    pub fn from_matrix(k: &Matrix3<f64>) -> Result<Self> {
        let k22 = k[(2, 2)];
        if k22 == 0.0 || !k22.is_finite() {
            return Err(Error::SingularCalibration);
        }
        let k = k / k22;
        Self::with_skew(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], k[(0, 1)])
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Camera orientation (world to camera) and camera center in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, center: Vector3<f64>) -> Result<Self> {
        if !is_rotation(&rotation, ROTATION_TOLERANCE) {
            return Err(Error::DegenerateInput("pose rotation is not in SO(3)"));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput("camera center is not finite"));
        }
        Ok(Self { rotation, center })
    }

    /// Builds a pose from a rotation produced by this crate's own
    /// orthogonalization routines.
    pub(crate) fn from_parts(rotation: Matrix3<f64>, center: Vector3<f64>) -> Self {
        debug_assert!(is_rotation(&rotation, 1e-9));
        Self { rotation, center }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            center: Vector3::zeros(),
        }
    }

    /// Pose from a world-to-camera rotation and translation `t = -R r`.
    pub fn from_rotation_translation(rotation: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let center = -(rotation.transpose() * t);
        Self::new(rotation, center)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    pub fn translation(&self) -> Vector3<f64> {
        -(self.rotation * self.center)
    }

    /// World point expressed in the camera frame.
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }
}

/// A 3x4 camera projection matrix, defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn new(m: Matrix3x4<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput("projection matrix has non-finite entries"));
        }
        if m.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateInput("projection matrix is zero"));
        }
        Ok(Self(m))
    }

    /// Rebuilds `P` from its column-major vectorization.
    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::DegenerateInput("vec(P) must have 12 entries"));
        }
        Self::new(Matrix3x4::from_column_slice(v))
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Column-major vectorization.
    pub fn to_vec(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out.copy_from_slice(self.0.as_slice());
        out
    }

    /// `k^T P p̄`, the third homogeneous coordinate of the projected point.
    pub fn depth(&self, p: &Vector3<f64>) -> f64 {
        let m = &self.0;
        m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)] * p.z + m[(2, 3)]
    }
}

/// One 3D world point and its measured pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

impl Correspondence {
    pub fn new(point: Vector3<f64>, pixel: Vector2<f64>) -> Result<Self> {
        if !point.iter().chain(pixel.iter()).all(|v| v.is_finite()) {
            return Err(Error::DegenerateInput("correspondence has non-finite components"));
        }
        Ok(Self { point, pixel })
    }

    pub fn point_h(&self) -> Vector4<f64> {
        self.point.push(1.0)
    }

    pub fn pixel_h(&self) -> Vector3<f64> {
        self.pixel.push(1.0)
    }
}

/// Cross-product matrix `[v x]`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix for a rotation vector (Rodrigues formula).
pub fn exp_so3(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < 1e-16 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    let orth = m.transpose() * m - Matrix3::identity();
    orth.iter().all(|v| v.abs() <= tol) && (m.determinant() - 1.0).abs() <= tol
}

/// Projects a world point through `P`.
pub fn project(p_mat: &ProjectionMatrix, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    let x = p_mat.matrix() * p.push(1.0);
    if x.z.abs() < 1e-15 {
        return Err(Error::DepthZero);
    }
    Ok(Vector2::new(x.x / x.z, x.y / x.z))
}

/// Projects a world point with a calibrated pose: `K R (p - r)` then divide.
pub fn project_pose(k: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> Result<Vector2<f64>> {
    let xc = pose.transform(p);
    if xc.z.abs() < 1e-15 {
        return Err(Error::DepthZero);
    }
    let (x, y) = (xc.x / xc.z, xc.y / xc.z);
    Ok(Vector2::new(k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy))
}

/// `P = K R [I, -r]`.
pub fn compose_projection(k: &CameraIntrinsics, pose: &Pose) -> ProjectionMatrix {
    let km = k.matrix();
    let kr = km * pose.rotation();
    let mut m = Matrix3x4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
    m.set_column(3, &(-(kr * pose.center())));
    ProjectionMatrix(m)
}

/// Splits `P` into intrinsics and pose via an RQ decomposition of its left block.
pub fn decompose_projection(p: &ProjectionMatrix) -> Result<(CameraIntrinsics, Pose)> {
    let mut m: Matrix3<f64> = p.matrix().fixed_view::<3, 3>(0, 0).into_owned();
    let mut last = p.matrix().column(3).into_owned();

    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= 1e12) {
        return Err(Error::SingularProjection(cond));
    }

    // K has a positive diagonal and det(R) = +1, so det(KR) must be positive.
    if m.determinant() < 0.0 {
        m = -m;
        last = -last;
    }

    let (mut k, mut r) = rq3(&m);
    for i in 0..3 {
        if k[(i, i)] < 0.0 {
            k.column_mut(i).neg_mut();
            r.row_mut(i).neg_mut();
        }
    }
    let center = -(m.try_inverse().ok_or(Error::SingularProjection(cond))? * last);
    let intrinsics = CameraIntrinsics::from_matrix(&k)?;
    let rotation = nearest_rotation(&r)?;
    Ok((intrinsics, Pose::from_parts(rotation, center)))
}

/// RQ decomposition `m = K R` (K upper triangular, R orthogonal) built from
/// a QR factorization of the row-reversed transpose.
fn rq3(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let k = flip * r.transpose() * flip;
    let rot = flip * q.transpose();
    (k, rot)
}

/// Closest rotation to `m` in the Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("matrix has non-finite entries"));
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;

    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    if s[order[0]] < 1e-12 && s[order[1]] < 1e-12 {
        return Err(Error::DegenerateInput("rotation is ambiguous (rank < 2)"));
    }

    let mut u = u;
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(order[0]).neg_mut();
    }
    Ok(u * v_t)
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_angle_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> f64 {
    let d = ra * rb.transpose();
    // atan2 of the axis and trace parts; acos of the trace alone loses
    // about 1e-8 rad of precision near zero.
    let sin_part = 0.5 * Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]).norm();
    let cos_part = ((d.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    sin_part.atan2(cos_part).to_degrees()
}

/// Hamilton quaternion `(w, x, y, z)` to rotation matrix.
pub fn quat_to_rotation(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n >= 1e-9) {
        return Err(Error::ZeroQuaternion);
    }
    let [w, x, y, z] = q.map(|v| v / n);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Rotation matrix to a unit quaternion `(w, x, y, z)` with `w >= 0`.
pub fn rotation_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let tr = r.trace();
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = q.map(|v| v / n);
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

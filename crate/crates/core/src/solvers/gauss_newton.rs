//! Gauss-Newton on the pixel reprojection error.
//!
//! Parameters are a rotation-vector increment composed on the left of the
//! current rotation, `R <- exp([δθ x]) R`, and an additive update of the
//! camera center.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, SMatrix, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::geometry::{exp_so3, skew, CameraIntrinsics, Correspondence, Pose};

const MAX_HALVINGS: usize = 10;
/// Mean squared residual (pixels^2) treated as an exact fit.
const ZERO_COST_PER_POINT: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussNewtonOutcome {
    pub pose: Pose,
    pub cost: f64,
    pub accepted_steps: usize,
    pub line_search_failed: bool,
}

fn projection_derivative(k: &CameraIntrinsics, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / xc.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        k.skew * iz,
        -(k.fx * xc.x + k.skew * xc.y) * iz2,
        0.0,
        k.fy * iz,
        -k.fy * xc.y * iz2,
    )
}

fn project_camera(k: &CameraIntrinsics, xc: &Vector3<f64>) -> nalgebra::Vector2<f64> {
    let (x, y) = (xc.x / xc.z, xc.y / xc.z);
    nalgebra::Vector2::new(k.fx * x + k.skew * y + k.cx, k.fy * y + k.cy)
}

/// Stacked residuals `u_i - project(p_i)`, two per correspondence.
pub fn reprojection_residuals(cs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> DVector<f64> {
    let mut e = DVector::zeros(2 * cs.len());
    for (i, c) in cs.iter().enumerate() {
        let r = c.pixel - project_camera(k, &pose.transform(&c.point));
        e[2 * i] = r.x;
        e[2 * i + 1] = r.y;
    }
    e
}

/// Analytic `2n x 6` Jacobian of [`reprojection_residuals`] with respect to
/// `(δθ, δr)`.
pub fn reprojection_jacobian(cs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * cs.len(), 6);
    for (i, c) in cs.iter().enumerate() {
        let (jr, jc) = point_jacobian(k, pose, &c.point);
        j.fixed_view_mut::<2, 3>(2 * i, 0).copy_from(&jr);
        j.fixed_view_mut::<2, 3>(2 * i, 3).copy_from(&jc);
    }
    j
}

fn point_jacobian(k: &CameraIntrinsics, pose: &Pose, p: &Vector3<f64>) -> (Matrix2x3<f64>, Matrix2x3<f64>) {
    let xc = pose.transform(p);
    let d = projection_derivative(k, &xc);
    // residual = u - pi(X): d/dθ = dpi [X x], d/dr = dpi R
    (d * skew(&xc), d * pose.rotation())
}

fn cost(cs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> f64 {
    let mut total = 0.0;
    for c in cs {
        let xc = pose.transform(&c.point);
        if !(xc.z > 0.0) {
            return f64::INFINITY;
        }
        total += (c.pixel - project_camera(k, &xc)).norm_squared();
    }
    total
}

fn apply_step(pose: &Pose, step: &Vector6<f64>, scale: f64) -> Pose {
    let dtheta = Vector3::new(step[0], step[1], step[2]) * scale;
    let dr = Vector3::new(step[3], step[4], step[5]) * scale;
    let rotation: Matrix3<f64> = exp_so3(&dtheta) * pose.rotation();
    let rotation = crate::geometry::nearest_rotation(&rotation).unwrap_or(rotation);
    Pose::from_parts(rotation, pose.center() + dr)
}

pub(crate) fn refine(
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    max_iters: usize,
    tol: f64,
) -> Result<GaussNewtonOutcome> {
    if cs.len() < 3 {
        return Err(Error::TooFewPoints {
            got: cs.len(),
            required: 3,
        });
    }
    let floor = ZERO_COST_PER_POINT * cs.len() as f64;
    let mut pose = *init;
    let mut current = cost(cs, k, &pose);
    let mut accepted_steps = 0;
    let mut line_search_failed = false;

    for _ in 0..max_iters {
        if current <= floor {
            break;
        }
        let mut h = SMatrix::<f64, 6, 6>::zeros();
        let mut g = Vector6::zeros();
        for c in cs {
            let (jr, jc) = point_jacobian(k, &pose, &c.point);
            let mut jp = SMatrix::<f64, 2, 6>::zeros();
            jp.fixed_view_mut::<2, 3>(0, 0).copy_from(&jr);
            jp.fixed_view_mut::<2, 3>(0, 3).copy_from(&jc);
            let e = c.pixel - project_camera(k, &pose.transform(&c.point));
            h += jp.transpose() * jp;
            g += jp.transpose() * e;
        }
        let Some(chol) = h.cholesky() else {
            line_search_failed = true;
            break;
        };
        let step = -chol.solve(&g);
        // predicted decrease of the linearized model
        let predicted = -(g.dot(&step));
        if predicted <= tol * current {
            break;
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = apply_step(&pose, &step, scale);
            let c = cost(cs, k, &candidate);
            if c < current {
                accepted = Some((candidate, c));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((candidate, c)) => {
                let decrease = current - c;
                pose = candidate;
                current = c;
                accepted_steps += 1;
                if decrease < tol * (current + decrease) {
                    break;
                }
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
    }
    Ok(GaussNewtonOutcome {
        pose,
        cost: current,
        accepted_steps,
        line_search_failed,
    })
}

//! Recovery of a metric pose from a homogeneous DLT solution.
//!
//! The normalized solution is mapped back to the calibrated frame together
//! with its information matrix. The diagonal information of the rotation
//! block weights an elementwise Procrustes fit onto SO(3), and the
//! translation can be re-solved linearly once the rotation is fixed.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector3};

use crate::dlt::{information_matrix, DltSolution, Mat12, Vec12};
use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, skew, CameraIntrinsics, Correspondence, Pose};
use crate::normalization::{PixelNormalization, PointNormalization};

/// Normal matrices of the weighted Procrustes step above this condition
/// number are treated as degenerate.
pub const PROCRUSTES_CONDITION_LIMIT: f64 = 1e10;
pub const MAX_PROCRUSTES_ITERATIONS: usize = 5;
const PROCRUSTES_STEP_TOLERANCE: f64 = 1e-12;
pub const LOST_CONDITION_LIMIT: f64 = 1e12;

/// Unscaled, unorthogonalized `R [I, -r]` and the information weights of
/// its rotation block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenormalizedPose {
    pub r_acute: Matrix3<f64>,
    pub center: Vector3<f64>,
    /// `W[(i, j)]` is the information of entry `(i, j)` of `r_acute`.
    pub w: Matrix3<f64>,
}

/// `M` with `vec(K^-1 T_u^-1 P~ T_p) = M vec(P~)`, i.e. `T_p^T ⊗ (K^-1 T_u^-1)`.
pub fn declamp_matrix(k: &CameraIntrinsics, tu: &PixelNormalization, tp: &PointNormalization) -> Mat12 {
    let left = k.inverse_matrix() * tu.inverse_matrix();
    let tpm = tp.matrix();
    let mut m = Mat12::zeros();
    for i in 0..4 {
        for j in 0..4 {
            m.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&(left * tpm[(j, i)]));
        }
    }
    m
}

/// De-normalizes the solution, removes `K`, and transforms the information
/// matrix into the same frame.
pub fn declamp_denormalize(
    sol: &DltSolution,
    k: &CameraIntrinsics,
    tu: &PixelNormalization,
    tp: &PointNormalization,
) -> Result<DenormalizedPose> {
    let m = declamp_matrix(k, tu, tp);
    let x: Vec12 = m * Vec12::from_column_slice(&sol.p.to_vec());
    let m_inv = m.try_inverse().ok_or(Error::SingularCalibration)?;
    let info = m_inv.transpose() * information_matrix(sol) * m_inv;

    let r_acute = Matrix3::from_column_slice(&x.as_slice()[..9]);
    let last = Vector3::from_column_slice(&x.as_slice()[9..]);
    let inv = r_acute
        .try_inverse()
        .ok_or(Error::DegenerateInput("rotation block of the solution is singular"))?;
    let w = Matrix3::from_fn(|r, c| info[(3 * c + r, 3 * c + r)].max(0.0));
    Ok(DenormalizedPose {
        r_acute,
        center: -(inv * last),
        w,
    })
}

/// Result of [`weighted_procrustes`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcrustesOutcome {
    pub rotation: Matrix3<f64>,
    /// The weighted normal equations were ill conditioned and the
    /// unweighted solution was returned instead.
    pub degenerate_weights: bool,
}

/// `r_acute` rescaled to unit determinant.
pub fn unit_determinant(r_acute: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = r_acute.determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(Error::DegenerateInput("rotation block has zero determinant"));
    }
    Ok(r_acute / det.cbrt())
}

/// Elementwise-weighted Frobenius cost `||(R - target) ⊙ W||^2`.
pub fn weighted_cost(r: &Matrix3<f64>, target: &Matrix3<f64>, w: &Matrix3<f64>) -> f64 {
    (r - target).component_mul(w).norm_squared()
}

/// Rotation minimizing `||(R - s Ŕ) ⊙ W||_F` over SO(3), where `s` brings
/// `Ŕ` to unit determinant.
///
/// Starts from the unweighted Procrustes solution `R0` and solves the 3x3
/// normal equations of the small-angle model `R = (I - [δφ x]) R0`, then
/// re-orthogonalizes. `iterations` is clamped to `1..=5`; extra iterations
/// stop once `|δφ| < 1e-12`.
pub fn weighted_procrustes(r_acute: &Matrix3<f64>, w: &Matrix3<f64>, iterations: usize) -> Result<ProcrustesOutcome> {
    if w.iter().all(|&v| v == 0.0) || !w.iter().all(|v| v.is_finite() && *v >= 0.0) {
        return Err(Error::DegenerateInput(
            "Procrustes weights must be nonnegative and not all zero",
        ));
    }
    let target = unit_determinant(r_acute)?;
    let unweighted = nearest_rotation(&target)?;
    let mut r0 = unweighted;
    for _ in 0..iterations.clamp(1, MAX_PROCRUSTES_ITERATIONS) {
        let e = r0 - target;
        let mut normal = Matrix3::zeros();
        let mut rhs = Vector3::zeros();
        for j in 0..3 {
            // column j of [δφ x] R0 is -[R0_j x] δφ
            let cj = skew(&r0.column(j).into_owned());
            for i in 0..3 {
                let w2 = w[(i, j)] * w[(i, j)];
                let row = cj.row(i).transpose();
                normal += row * row.transpose() * w2;
                rhs -= row * (w2 * e[(i, j)]);
            }
        }
        let sv = normal.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond <= PROCRUSTES_CONDITION_LIMIT) {
            return Ok(ProcrustesOutcome {
                rotation: unweighted,
                degenerate_weights: true,
            });
        }
        let dphi = normal
            .lu()
            .solve(&rhs)
            .ok_or(Error::DegenerateInput("singular Procrustes normal matrix"))?;
        r0 = nearest_rotation(&((Matrix3::identity() - skew(&dphi)) * r0))?;
        if dphi.norm() < PROCRUSTES_STEP_TOLERANCE {
            break;
        }
    }
    Ok(ProcrustesOutcome {
        rotation: r0,
        degenerate_weights: false,
    })
}

/// Applies the determinant scale and pairs the final rotation with the
/// camera center of the solution (which is scale invariant).
pub fn recover_scale_and_position(
    r_acute: &Matrix3<f64>,
    center: &Vector3<f64>,
    r_final: &Matrix3<f64>,
) -> Result<Pose> {
    let det = r_acute.determinant();
    if det < 0.0 {
        return Err(Error::ReflectionDetected);
    }
    if det == 0.0 || !det.is_finite() {
        return Err(Error::DegenerateInput("rotation block has zero determinant"));
    }
    if !center.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("camera center is not finite"));
    }
    Ok(Pose::from_parts(*r_final, *center))
}

/// Pixel-space rows `S [ū x] K` shared by the translation system.
fn lost_rows(c: &Correspondence, km: &Matrix3<f64>) -> Matrix2x3<f64> {
    (skew(&c.pixel_h()) * km).fixed_rows::<2>(0).into_owned()
}

/// Translation `t` for a fixed rotation from the weighted DLT rows, by
/// splitting them into the rotation and translation columns:
/// `(q_i S C_i) t = -(q_i S B_i) vec(R)`, solved through 3x3 normal equations.
pub fn lost_translation(
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    weights: &[f64],
) -> Result<Vector3<f64>> {
    if cs.len() < 2 {
        return Err(Error::TooFewPoints {
            got: cs.len(),
            required: 2,
        });
    }
    if weights.len() != cs.len() {
        return Err(Error::WeightLength {
            got: weights.len(),
            expected: cs.len(),
        });
    }
    let km = k.matrix();
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (c, &q) in cs.iter().zip(weights) {
        let l = lost_rows(c, &km);
        let ltl = l.transpose() * l * (q * q);
        normal += ltl;
        rhs -= ltl * (rotation * c.point);
    }
    let sv = normal.singular_values();
    let cond = sv.max() / sv.min();
    if !(cond <= LOST_CONDITION_LIMIT) {
        return Err(Error::RankDeficient(1.0 / cond));
    }
    normal
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .ok_or(Error::RankDeficient(0.0))
}

/// Norm of the weighted translation-system residual for a candidate `t`.
pub fn lost_residual(
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    rotation: &Matrix3<f64>,
    weights: &[f64],
    t: &Vector3<f64>,
) -> f64 {
    let km = k.matrix();
    cs.iter()
        .zip(weights)
        .map(|(c, &q)| (lost_rows(c, &km) * (rotation * c.point + t) * q).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Rotation-block rows of the full weighted system, exposed for testing the
/// slicing against the 12-column matrix.
pub fn split_blocks(c: &Correspondence, k: &CameraIntrinsics) -> (SMatrix<f64, 2, 9>, Matrix2x3<f64>) {
    let l = lost_rows(c, &k.matrix());
    let b = SMatrix::<f64, 2, 9>::from_fn(|r, col| c.point[col / 3] * l[(r, col % 3)]);
    (b, l)
}

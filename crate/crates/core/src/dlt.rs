//! Stacked DLT constraint system and its null-space solve.

use nalgebra::{DMatrix, SMatrix, SVector, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{Correspondence, ProjectionMatrix};

/// Minimum number of correspondences for the 11-DOF projection matrix.
pub const MIN_POINTS: usize = 6;

/// Above this many rows the null space is taken from the 12x12 Gram matrix.
pub const GRAM_ROW_THRESHOLD: usize = 4096;

/// Null-space solves whose second-smallest singular value falls below this
/// fraction of the largest are rejected.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Fraction of input depths that must agree in sign to avoid the
/// mixed-depth flag.
pub const DEPTH_AGREEMENT: f64 = 0.9;

pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = SVector<f64, 12>;

/// Two rows of `p̄^T ⊗ [ū x]` for one correspondence.
pub type ConstraintBlock = SMatrix<f64, 2, 12>;

/// Constraint rows for one correspondence, with the redundant third row of
/// the cross product dropped.
pub fn constraint_block(c: &Correspondence) -> ConstraintBlock {
    let mut block = ConstraintBlock::zeros();
    fill_block(&mut block, c, 1.0);
    block
}

fn fill_block<S>(out: &mut nalgebra::Matrix<f64, nalgebra::U2, nalgebra::U12, S>, c: &Correspondence, q: f64)
where
    S: nalgebra::StorageMut<f64, nalgebra::U2, nalgebra::U12>,
{
    let (u, v) = (c.pixel.x, c.pixel.y);
    let ph = c.point_h();
    // rows of [ū x]: (0, -1, v) and (1, 0, -u)
    for j in 0..4 {
        let w = q * ph[j];
        out[(0, 3 * j + 1)] = -w;
        out[(0, 3 * j + 2)] = w * v;
        out[(1, 3 * j)] = w;
        out[(1, 3 * j + 2)] = -w * u;
        out[(0, 3 * j)] = 0.0;
        out[(1, 3 * j + 1)] = 0.0;
    }
}

/// Stacks `q_i S A_i` for all correspondences into a `2n x 12` matrix.
pub fn assemble(cs: &[Correspondence], weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
    if cs.len() < MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: cs.len(),
            required: MIN_POINTS,
        });
    }
    if let Some(w) = weights {
        if w.len() != cs.len() {
            return Err(Error::WeightLength {
                got: w.len(),
                expected: cs.len(),
            });
        }
        if let Some(i) = w.iter().position(|q| !q.is_finite()) {
            return Err(Error::NonFiniteWeight(i));
        }
    }
    let mut a = DMatrix::zeros(2 * cs.len(), 12);
    for (i, c) in cs.iter().enumerate() {
        let q = weights.map_or(1.0, |w| w[i]);
        let mut rows = a.fixed_view_mut::<2, 12>(2 * i, 0);
        fill_block(&mut rows, c, q);
    }
    Ok(a)
}

/// Which factorization [`solve_nullspace_with`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NullspaceMethod {
    /// SVD of the stacked matrix up to [`GRAM_ROW_THRESHOLD`] rows, Gram
    /// eigendecomposition beyond.
    #[default]
    Auto,
    Svd,
    Gram,
}

/// Homogeneous least-squares solution together with the factors needed for
/// its information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DltSolution {
    /// Unit-Frobenius-norm solution.
    pub p: ProjectionMatrix,
    /// Singular values in descending order.
    pub singular_values: Vec12,
    /// Right singular vectors, columns ordered like `singular_values`.
    pub v: Mat12,
    /// Fewer than 90% of the input depths share the majority sign.
    pub mixed_depths: bool,
}

pub fn solve_nullspace(a: &DMatrix<f64>, points: &[Vector4<f64>]) -> Result<DltSolution> {
    solve_nullspace_with(a, points, NullspaceMethod::Auto)
}

/// Right singular vector of the smallest singular value of `a`, sign-fixed so
/// that the mean depth of `points` (homogeneous, same frame as `a`) is
/// positive.
pub fn solve_nullspace_with(a: &DMatrix<f64>, points: &[Vector4<f64>], method: NullspaceMethod) -> Result<DltSolution> {
    if a.ncols() != 12 || a.nrows() < 11 {
        return Err(Error::TooFewPoints {
            got: a.nrows() / 2,
            required: MIN_POINTS,
        });
    }
    let use_gram = match method {
        NullspaceMethod::Auto => a.nrows() > GRAM_ROW_THRESHOLD,
        NullspaceMethod::Svd => false,
        NullspaceMethod::Gram => true,
    };
    let (singular_values, v) = if use_gram {
        gram_factors(&gram_matrix(a))
    } else {
        svd_factors(a)
    };
    finish_solution(singular_values, v, points)
}

/// Null-space solve from a pre-accumulated Gram matrix `A^T A`.
pub fn solve_gram(gram: &Mat12, points: &[Vector4<f64>]) -> Result<DltSolution> {
    let (s, v) = gram_factors(gram);
    finish_solution(s, v, points)
}

/// `A^T A` accumulated one row at a time (upper triangle, then mirrored).
fn gram_matrix(a: &DMatrix<f64>) -> Mat12 {
    let m = a.nrows();
    let data = a.as_slice();
    let mut g = [[0.0f64; 12]; 12];
    let mut row = [0.0f64; 12];
    for r in 0..m {
        for (j, v) in row.iter_mut().enumerate() {
            *v = data[j * m + r];
        }
        for i in 0..12 {
            let ri = row[i];
            for j in i..12 {
                g[i][j] += ri * row[j];
            }
        }
    }
    Mat12::from_fn(|i, j| if i <= j { g[i][j] } else { g[j][i] })
}

/// SVD of `A` through its `R` factor: `A = Q R` shares singular values and
/// right singular vectors with the 12x12 `R`, which is much cheaper to
/// decompose than the tall matrix.
fn svd_factors(a: &DMatrix<f64>) -> (Vec12, Mat12) {
    let r: Mat12 = if a.nrows() >= 12 {
        a.clone().qr().r().fixed_view::<12, 12>(0, 0).into_owned()
    } else {
        let mut padded = Mat12::zeros();
        padded.view_mut((0, 0), (a.nrows(), 12)).copy_from(a);
        padded
    };
    let svd = r.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut values = Vec12::zeros();
    let mut v = Mat12::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = s[src];
        v.set_column(dst, &v_t.row(src).transpose());
    }
    (values, v)
}

fn gram_factors(gram: &Mat12) -> (Vec12, Mat12) {
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut values = Vec12::zeros();
    let mut v = Mat12::zeros();
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src].max(0.0).sqrt();
        v.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, v)
}

fn finish_solution(singular_values: Vec12, mut v: Mat12, points: &[Vector4<f64>]) -> Result<DltSolution> {
    let ratio = singular_values[10] / singular_values[0];
    if !(ratio >= RANK_TOLERANCE) {
        return Err(Error::RankDeficient(ratio));
    }
    let mut x: Vec12 = v.column(11).into_owned();
    x /= x.norm();

    let depth = |x: &Vec12, p: &Vector4<f64>| x[2] * p[0] + x[5] * p[1] + x[8] * p[2] + x[11] * p[3];
    let mut mixed_depths = false;
    if !points.is_empty() {
        let depths: Vec<f64> = points.iter().map(|p| depth(&x, p)).collect();
        let mean = depths.iter().sum::<f64>() / depths.len() as f64;
        if mean < 0.0 {
            x.neg_mut();
            v.column_mut(11).neg_mut();
        }
        let positive = depths.iter().filter(|&&d| (d > 0.0) == (mean >= 0.0)).count();
        mixed_depths = (positive as f64) < DEPTH_AGREEMENT * depths.len() as f64;
    }
    Ok(DltSolution {
        p: ProjectionMatrix::from_vec(x.as_slice())?,
        singular_values,
        v,
        mixed_depths,
    })
}

/// Information matrix `V D^2 V^T` of the solved system.
pub fn information_matrix(sol: &DltSolution) -> Mat12 {
    let d2 = sol.singular_values.map(|s| s * s);
    sol.v * Mat12::from_diagonal(&d2) * sol.v.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compose_projection, project_pose, skew, CameraIntrinsics, Pose};
    use crate::test_support::{random_rotation, rng};
    use nalgebra::{Matrix3x4, Vector2, Vector3};
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Correspondence>, ProjectionMatrix) {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap();
        let pose = Pose::new(random_rotation(rng), Vector3::new(0.3, -0.2, 0.1)).unwrap();
        let cs = (0..n)
            .map(|_| {
                let xc = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(4.0..8.0),
                );
                let p = pose.rotation().transpose() * xc + pose.center();
                Correspondence::new(p, project_pose(&k, &pose, &p).unwrap()).unwrap()
            })
            .collect();
        (cs, compose_projection(&k, &pose))
    }

    /// Cyclic Jacobi eigenvalue iteration, used as an oracle independent of
    /// nalgebra's decompositions.
    fn jacobi_min_eigenvalue(mut m: Mat12) -> f64 {
        for _sweep in 0..100 {
            let off: f64 = (0..12)
                .flat_map(|i| (0..12).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| m[(i, j)].powi(2))
                .sum();
            if off < 1e-30 * m.norm_squared() {
                break;
            }
            for p in 0..12 {
                for q in p + 1..12 {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let mut rot = Mat12::identity();
                    rot[(p, p)] = c;
                    rot[(q, q)] = c;
                    rot[(p, q)] = s;
                    rot[(q, p)] = -s;
                    m = rot.transpose() * m * rot;
                }
            }
        }
        (0..12).map(|i| m[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn origin_block_populates_only_last_group() {
        let c = Correspondence::new(Vector3::zeros(), Vector2::zeros()).unwrap();
        let b = constraint_block(&c);
        for j in 0..9 {
            assert_eq!(b.column(j).norm(), 0.0);
        }
        // [e3 x] rows 1-2: (0,-1,0), (1,0,0)
        assert_eq!(b[(0, 10)], -1.0);
        assert_eq!(b[(1, 9)], 1.0);
        assert_eq!(b.columns(9, 3).abs().sum(), 2.0);
    }

    #[test]
    fn block_matches_cross_product() {
        let mut rng = rng(21);
        for _ in 0..200 {
            let c = Correspondence::new(
                Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0)),
                Vector2::from_fn(|_, _| rng.random_range(-500.0..500.0)),
            )
            .unwrap();
            let p = Matrix3x4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let vecp = Vec12::from_column_slice(p.as_slice());
            let lhs = constraint_block(&c) * vecp;
            let rhs = skew(&c.pixel_h()) * (p * c.point_h());
            assert!((lhs[0] - rhs[0]).abs() < 1e-12 * rhs.norm().max(1.0));
            assert!((lhs[1] - rhs[1]).abs() < 1e-12 * rhs.norm().max(1.0));
        }
    }

    #[test]
    fn noise_free_blocks_vanish() {
        let mut rng = rng(22);
        let (cs, p) = scene(&mut rng, 30);
        let vecp = Vec12::from_column_slice(p.matrix().as_slice());
        for c in &cs {
            assert!((constraint_block(c) * vecp).norm() < 1e-10 * vecp.norm());
        }
    }

    #[test]
    fn assemble_shapes_and_errors() {
        let mut rng = rng(23);
        let (cs, _) = scene(&mut rng, 6);
        assert_eq!(assemble(&cs, None).unwrap().shape(), (12, 12));
        assert_eq!(
            assemble(&cs[..5], None),
            Err(Error::TooFewPoints { got: 5, required: 6 })
        );
        assert!(matches!(
            assemble(&cs, Some(&[1.0; 3])),
            Err(Error::WeightLength { .. })
        ));
        let mut w = vec![1.0; 6];
        w[4] = f64::NAN;
        assert_eq!(assemble(&cs, Some(&w)), Err(Error::NonFiniteWeight(4)));
    }

    #[test]
    fn uniform_weights_scale_matrix_and_keep_solution() {
        let mut rng = rng(24);
        let (mut cs, _) = scene(&mut rng, 20);
        for c in &mut cs {
            c.pixel += Vector2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        }
        let pts: Vec<_> = cs.iter().map(|c| c.point_h()).collect();
        let a = assemble(&cs, None).unwrap();
        let aw = assemble(&cs, Some(&[3.5; 20])).unwrap();
        assert!((&a * 3.5 - &aw).abs().max() < 1e-9);
        let s1 = solve_nullspace(&a, &pts).unwrap();
        let s2 = solve_nullspace(&aw, &pts).unwrap();
        assert!((s1.p.matrix() - s2.p.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn noise_free_system_is_rank_eleven() {
        let mut rng = rng(25);
        let (cs, p_true) = scene(&mut rng, 20);
        let a = assemble(&cs, None).unwrap();
        let pts: Vec<_> = cs.iter().map(|c| c.point_h()).collect();
        let sol = solve_nullspace(&a, &pts).unwrap();
        assert!(sol.singular_values[11] < 1e-9 * sol.singular_values[0]);
        let truth = p_true.matrix() / p_true.matrix().norm();
        assert!((sol.p.matrix() - truth).abs().max() < 1e-8);
    }

    #[test]
    fn exact_null_vector_is_recovered() {
        let mut rng = rng(26);
        let x0 = Vec12::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let mut a = DMatrix::from_fn(30, 12, |_, _| rng.random_range(-1.0..1.0));
        // project every row onto the complement of x0
        for mut row in a.row_iter_mut() {
            let d = row.dot(&x0.transpose());
            row -= x0.transpose() * d;
        }
        let sol = solve_nullspace(&a, &[]).unwrap();
        let x = Vec12::from_column_slice(&sol.p.to_vec());
        assert!((x - x0).norm().min((x + x0).norm()) < 1e-10);
    }

    #[test]
    fn residual_matches_independent_eigensolver() {
        let mut rng = rng(27);
        for _ in 0..20 {
            let a = DMatrix::from_fn(40, 12, |_, _| rng.random_range(-1.0..1.0));
            let sol = solve_nullspace(&a, &[]).unwrap();
            let x = Vec12::from_column_slice(&sol.p.to_vec());
            let residual = (&a * x).norm();
            let gram = Mat12::from_iterator(a.tr_mul(&a).iter().copied());
            let lambda = jacobi_min_eigenvalue(gram);
            assert!(
                (residual - lambda.sqrt()).abs() < 1e-9,
                "{residual} vs {}",
                lambda.sqrt()
            );
        }
    }

    #[test]
    fn gram_and_svd_paths_agree() {
        let mut rng = rng(28);
        let (mut cs, _) = scene(&mut rng, 40);
        for c in &mut cs {
            c.pixel += Vector2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        }
        let pts: Vec<_> = cs.iter().map(|c| c.point_h()).collect();
        // normalized-like scale keeps the Gram matrix well conditioned
        let a = assemble(&cs, None).unwrap() / 1000.0;
        let s1 = solve_nullspace_with(&a, &pts, NullspaceMethod::Svd).unwrap();
        let s2 = solve_nullspace_with(&a, &pts, NullspaceMethod::Gram).unwrap();
        assert!((s1.p.matrix() - s2.p.matrix()).abs().max() < 1e-6);
        let rel = (information_matrix(&s1) - information_matrix(&s2)).norm() / information_matrix(&s1).norm();
        assert!(rel < 1e-10);
    }

    #[test]
    fn coplanar_points_are_rank_deficient() {
        let k = CameraIntrinsics::new(800.0, 800.0, 320.0, 240.0).unwrap();
        let mut rng = rng(29);
        let pose = Pose::new(
            Matrix3x4::identity().fixed_view::<3, 3>(0, 0).into_owned(),
            Vector3::new(0.0, 0.0, -5.0),
        )
        .unwrap();
        let cs: Vec<_> = (0..12)
            .map(|_| {
                let p = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0);
                Correspondence::new(p, project_pose(&k, &pose, &p).unwrap()).unwrap()
            })
            .collect();
        let a = assemble(&cs, None).unwrap();
        assert!(matches!(solve_nullspace(&a, &[]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn sign_follows_cheirality() {
        let mut rng = rng(30);
        let (cs, _) = scene(&mut rng, 12);
        let pts: Vec<_> = cs.iter().map(|c| c.point_h()).collect();
        let a = assemble(&cs, None).unwrap();
        let sol = solve_nullspace(&a, &pts).unwrap();
        assert!(cs.iter().all(|c| sol.p.depth(&c.point) > 0.0));
        assert!(!sol.mixed_depths);
    }

    #[test]
    fn permutation_leaves_solution_unchanged() {
        let mut rng = rng(31);
        let (mut cs, _) = scene(&mut rng, 25);
        for c in &mut cs {
            c.pixel += Vector2::from_fn(|_, _| rng.random_range(-2.0..2.0));
        }
        let pts: Vec<_> = cs.iter().map(|c| c.point_h()).collect();
        let s1 = solve_nullspace(&assemble(&cs, None).unwrap(), &pts).unwrap();
        cs.reverse();
        cs.swap(3, 17);
        let s2 = solve_nullspace(&assemble(&cs, None).unwrap(), &pts).unwrap();
        assert!((s1.p.matrix() - s2.p.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn information_matrix_matches_direct_sums() {
        let mut rng = rng(32);
        let (mut cs, _) = scene(&mut rng, 15);
        for c in &mut cs {
            c.pixel += Vector2::from_fn(|_, _| rng.random_range(-1.0..1.0));
        }
        let weights: Vec<f64> = (0..15).map(|_| rng.random_range(0.1..2.0)).collect();
        for w in [None, Some(weights.as_slice())] {
            let a = assemble(&cs, w).unwrap();
            let sol = solve_nullspace(&a, &[]).unwrap();
            let mut direct = Mat12::zeros();
            for (i, c) in cs.iter().enumerate() {
                let q = w.map_or(1.0, |w| w[i]);
                let b = constraint_block(c);
                direct += b.transpose() * b * (q * q);
            }
            let info = information_matrix(&sol);
            assert!((info - direct).norm() / direct.norm() < 1e-8);
            assert!((info - info.transpose()).abs().max() < 1e-9 * info.norm());
        }
        let zero = DltSolution {
            singular_values: Vec12::zeros(),
            ..solve_nullspace(&assemble(&cs, None).unwrap(), &[]).unwrap()
        };
        assert_eq!(information_matrix(&zero), Mat12::zeros());
    }

    #[test]
    fn r_factor_svd_matches_direct_svd() {
        let mut r = rng(61);
        for rows in [11usize, 12, 40, 500] {
            let a = DMatrix::from_fn(rows, 12, |_, _| r.random_range(-1.0..1.0));
            let (s, v) = svd_factors(&a);
            let mut direct: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
            direct.sort_by(|x, y| y.total_cmp(x));
            for (i, d) in direct.iter().enumerate() {
                assert!((s[i] - d).abs() < 1e-12 * direct[0], "rows {rows}");
            }
            // every column of V is a right singular vector: |A v_i| = s_i
            for i in 0..12 {
                assert!(((&a * v.column(i)).norm() - s[i]).abs() < 1e-12 * direct[0]);
            }
        }
    }
}

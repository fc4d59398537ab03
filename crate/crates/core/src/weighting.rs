//! Maximum-likelihood row weights for the DLT system.
//!
//! With isotropic pixel noise the covariance of the algebraic residual of
//! correspondence `i` is proportional to the squared depth of the point under
//! the true projection, so whitening each row pair reduces to scaling it by
//! `q_i = 1 / (sigma_u * depth_i)`. The depth is evaluated with a preliminary
//! estimate of `P`, which only needs to be good enough to rank the points.

use nalgebra::{Matrix2x3, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dlt::{assemble, solve_nullspace};
use crate::error::{Error, Result};
use crate::geometry::{skew, Correspondence, ProjectionMatrix};
use crate::normalization::{PixelNormalization, PointNormalization};

pub const DEFAULT_SUBSET_SIZE: usize = 12;

/// Correspondences behind the preliminary camera are dropped while they
/// stay below this fraction of the input; above it the solve is aborted.
pub const MAX_NEGATIVE_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightContext {
    pub p0: ProjectionMatrix,
    pub sigma_u: f64,
}

impl WeightContext {
    pub fn new(p0: ProjectionMatrix, sigma_u: f64) -> Result<Self> {
        if !(sigma_u > 0.0 && sigma_u.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma_u must be positive, got {sigma_u}")));
        }
        Ok(Self { p0, sigma_u })
    }
}

/// Covariance of the algebraic residual `[ū x] P p̄` under pixel noise.
pub fn residual_covariance(ctx: &WeightContext, c: &Correspondence) -> Result<Matrix3<f64>> {
    let d = ctx.p0.depth(&c.point);
    if d.abs() < 1e-15 {
        return Err(Error::DepthZero);
    }
    let ux = skew(&c.pixel_h());
    let sts = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, 0.0));
    Ok(-(ux * sts * ux) * (d * d * ctx.sigma_u * ctx.sigma_u))
}

/// `q_i = 1 / (sigma_u * k^T P0 p̄_i)`.
pub fn weight_factor(ctx: &WeightContext, c: &Correspondence) -> Result<f64> {
    let d = ctx.p0.depth(&c.point);
    if d.abs() < 1e-15 {
        return Err(Error::DepthZero);
    }
    if d < 0.0 {
        return Err(Error::NegativeDepth);
    }
    Ok(1.0 / (ctx.sigma_u * d))
}

/// Whitening factor `B_i` with `B_i^T B_i` the pseudoinverse of the residual
/// covariance. Only used to cross-check [`weight_factor`].
pub fn whitening_factor(ctx: &WeightContext, c: &Correspondence) -> Matrix2x3<f64> {
    let u = c.pixel_h();
    let ux = skew(&u);
    let d = ctx.p0.depth(&c.point);
    let ux2 = ux * ux;
    ux2.fixed_rows::<2>(0).into_owned() / (ctx.sigma_u * u.norm_squared() * d)
}

/// Row weights for a whole problem.
#[derive(Debug, Clone, PartialEq)]
pub struct PointWeights {
    /// One weight per input correspondence; zero for dropped ones.
    pub q: Vec<f64>,
    /// Indices of correspondences behind the preliminary camera.
    pub dropped: Vec<usize>,
}

/// Computes `q_i` for every correspondence. Points behind the preliminary
/// camera get weight zero, which removes their rows from the system, unless
/// they make up [`MAX_NEGATIVE_FRACTION`] or more of the input.
pub fn point_weights(ctx: &WeightContext, cs: &[Correspondence]) -> Result<PointWeights> {
    let mut q = Vec::with_capacity(cs.len());
    let mut dropped = Vec::new();
    for (i, c) in cs.iter().enumerate() {
        match weight_factor(ctx, c) {
            Ok(w) => q.push(w),
            Err(Error::NegativeDepth | Error::DepthZero) => {
                q.push(0.0);
                dropped.push(i);
            }
            Err(e) => return Err(e),
        }
    }
    if dropped.len() as f64 >= MAX_NEGATIVE_FRACTION * cs.len() as f64 && !dropped.is_empty() {
        return Err(Error::TooManyNegativeDepths {
            negative: dropped.len(),
            total: cs.len(),
        });
    }
    Ok(PointWeights { q, dropped })
}

/// Deterministic subset of `min(n, size)` indices in increasing order.
pub fn subset_indices(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Output of [`preliminary_from_normalized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreliminaryEstimate {
    pub p: ProjectionMatrix,
    /// The subset was rank deficient and the full set was solved instead.
    pub fallback_used: bool,
}

/// Unweighted DLT on a pseudo-random subset of already-normalized
/// correspondences; falls back to the full set if the subset is degenerate.
pub fn preliminary_from_normalized(
    normalized: &[Correspondence],
    subset_size: usize,
    seed: u64,
) -> Result<PreliminaryEstimate> {
    let solve = |cs: &[Correspondence]| -> Result<ProjectionMatrix> {
        let a = assemble(cs, None)?;
        let pts: Vec<_> = cs.iter().map(Correspondence::point_h).collect();
        Ok(solve_nullspace(&a, &pts)?.p)
    };
    let idx = subset_indices(normalized.len(), subset_size, seed);
    let estimate = if idx.len() == normalized.len() {
        solve(normalized).map(|p| (p, false))
    } else {
        let subset: Vec<_> = idx.iter().map(|&i| normalized[i]).collect();
        match solve(&subset) {
            Err(Error::RankDeficient(_)) => solve(normalized).map(|p| (p, true)),
            other => other.map(|p| (p, false)),
        }
    };
    estimate.map(|(p, fallback_used)| PreliminaryEstimate { p, fallback_used })
}

/// Preliminary projection matrix in the normalized frame of the full set.
pub fn preliminary_estimate(cs: &[Correspondence], subset_size: usize, seed: u64) -> Result<ProjectionMatrix> {
    let (normalized, _, _) = normalize_correspondences(cs)?;
    preliminary_from_normalized(&normalized, subset_size, seed).map(|e| e.p)
}

/// Fits both normalizations on the full set and applies them.
pub fn normalize_correspondences(
    cs: &[Correspondence],
) -> Result<(Vec<Correspondence>, PixelNormalization, PointNormalization)> {
    let us: Vec<_> = cs.iter().map(|c| c.pixel).collect();
    let ps: Vec<_> = cs.iter().map(|c| c.point).collect();
    let tu = PixelNormalization::fit(&us)?;
    let tp = PointNormalization::fit(&ps)?;
    let normalized = cs
        .iter()
        .map(|c| Correspondence {
            point: tp.apply(&c.point),
            pixel: tu.apply(&c.pixel),
        })
        .collect();
    Ok((normalized, tu, tp))
}

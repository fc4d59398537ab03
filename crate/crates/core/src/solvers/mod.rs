//! End-to-end PnP pipelines.

mod gauss_newton;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::Vector4;

use crate::dlt::{assemble, solve_nullspace, DltSolution};
use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, project_pose, CameraIntrinsics, Correspondence, Pose, ProjectionMatrix};
use crate::normalization::{denormalize_projection, PixelNormalization, PointNormalization};
use crate::se3::{
    declamp_denormalize, lost_translation, recover_scale_and_position, unit_determinant, weighted_procrustes,
};
use crate::weighting::{
    normalize_correspondences, point_weights, preliminary_from_normalized, WeightContext, DEFAULT_SUBSET_SIZE,
};

pub use gauss_newton::{reprojection_jacobian, reprojection_residuals, GaussNewtonOutcome};

/// Pipelines exposed by [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Classical DLT on raw pixels and points.
    Dlt,
    /// DLT on normalized data.
    Ndlt,
    /// Weighted DLT with weighted Procrustes rotation recovery.
    Odlt,
    /// [`Method::Odlt`] followed by linear re-triangulation of the translation.
    OdltLost,
    /// [`Method::Ndlt`] refined with Gauss-Newton on the reprojection error.
    NdltGn,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Dlt,
        Method::Ndlt,
        Method::Odlt,
        Method::OdltLost,
        Method::NdltGn,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dlt => "dlt",
            Method::Ndlt => "ndlt",
            Method::Odlt => "odlt",
            Method::OdltLost => "odlt+lost",
            Method::NdltGn => "ndlt+gn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dlt" => Ok(Method::Dlt),
            "ndlt" => Ok(Method::Ndlt),
            "odlt" => Ok(Method::Odlt),
            "odlt+lost" | "odlt_lost" => Ok(Method::OdltLost),
            "ndlt+gn" | "ndlt_gn" => Ok(Method::NdltGn),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    /// Pixel noise standard deviation.
    pub sigma_u: f64,
    /// Correspondences used for the preliminary estimate.
    pub subset_size: usize,
    pub seed: u64,
    pub gn_max_iters: usize,
    /// Relative cost decrease below which Gauss-Newton stops.
    pub gn_tol: f64,
    /// Linearized weighted Procrustes iterations (1 to 5).
    pub procrustes_iterations: usize,
    /// Weighted solves in the oDLT pipeline. Each extra pass recomputes the
    /// weights from the previous solution; the standard two-step method uses one.
    pub reweight_iterations: usize,
    /// Forces every row weight and Procrustes weight to one, which turns
    /// oDLT into nDLT. Intended for testing.
    pub unit_weights: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::OdltLost,
            sigma_u: 1.0,
            subset_size: DEFAULT_SUBSET_SIZE,
            seed: 0,
            gn_max_iters: 10,
            gn_tol: 1e-10,
            procrustes_iterations: 1,
            reweight_iterations: 1,
            unit_weights: false,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_u > 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_u must be positive, got {}",
                self.sigma_u
            )));
        }
        if self.subset_size < crate::dlt::MIN_POINTS {
            return Err(Error::InvalidConfig(format!(
                "subset_size must be at least 6, got {}",
                self.subset_size
            )));
        }
        if self.gn_max_iters < 1 {
            return Err(Error::InvalidConfig("gn_max_iters must be at least 1".into()));
        }
        if self.reweight_iterations < 1 {
            return Err(Error::InvalidConfig("reweight_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Conditions worth reporting that did not stop the solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flag {
    /// Fewer than 90% of depths agreed in sign when fixing the null vector.
    MixedDepths,
    /// Weighted Procrustes fell back to the unweighted solution.
    DegenerateWeights,
    /// The preliminary subset was degenerate and the full set was used.
    FallbackUsed,
    /// Some correspondences were behind the preliminary camera and dropped.
    DroppedPoints,
    /// Gauss-Newton could not decrease the cost.
    LineSearchFailed,
}

impl Flag {
    pub fn name(&self) -> &'static str {
        match self {
            Flag::MixedDepths => "MixedDepths",
            Flag::DegenerateWeights => "DegenerateWeights",
            Flag::FallbackUsed => "FallbackUsed",
            Flag::DroppedPoints => "DroppedPoints",
            Flag::LineSearchFailed => "LineSearchFailed",
        }
    }
}

/// Wall-clock durations of pipeline stages, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub stages: Vec<(&'static str, Duration)>,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.stages.iter().map(|(_, d)| *d).sum()
    }
}

struct Stopwatch {
    last: Instant,
    timings: Timings,
}

impl Stopwatch {
    fn start() -> Self {
        Self {
            last: Instant::now(),
            timings: Timings::default(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.timings.stages.push((stage, now - self.last));
        self.last = now;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpResult {
    pub method: Method,
    pub pose: Pose,
    /// Root-mean-square reprojection error over all correspondences, pixels.
    pub reprojection_rms: f64,
    pub flags: BTreeSet<Flag>,
    pub timings: Timings,
}

/// Runs the pipeline selected by `cfg.method`.
pub fn solve(cs: &[Correspondence], k: &CameraIntrinsics, cfg: &SolverConfig) -> Result<PnpResult> {
    match cfg.method {
        Method::Dlt => solve_dlt(cs, k),
        Method::Ndlt => solve_ndlt(cs, k),
        Method::Odlt => solve_odlt(cs, k, cfg),
        Method::OdltLost => solve_odlt_lost(cs, k, cfg),
        Method::NdltGn => {
            let init = solve_ndlt(cs, k)?;
            refine_gauss_newton(cs, k, &init.pose, cfg).map(|mut r| {
                r.flags.extend(init.flags);
                let mut stages = init.timings.stages;
                stages.append(&mut r.timings.stages);
                r.timings.stages = stages;
                r
            })
        }
    }
}

/// Runs [`solve`] on the correspondences whose mask entry is `true`, e.g.
/// the inliers of an external consensus step.
pub fn solve_masked(
    cs: &[Correspondence],
    mask: &[bool],
    k: &CameraIntrinsics,
    cfg: &SolverConfig,
) -> Result<PnpResult> {
    if mask.len() != cs.len() {
        return Err(Error::InvalidConfig(format!(
            "inlier mask has {} entries for {} correspondences",
            mask.len(),
            cs.len()
        )));
    }
    let inliers: Vec<_> = cs.iter().zip(mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
    solve(&inliers, k, cfg)
}

/// Root-mean-square pixel reprojection error; points on the principal plane
/// are skipped.
pub fn reprojection_rms(cs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> f64 {
    let (sum, count) = cs
        .iter()
        .filter_map(|c| {
            project_pose(k, pose, &c.point)
                .ok()
                .map(|u| (u - c.pixel).norm_squared())
        })
        .fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    if count == 0 {
        f64::INFINITY
    } else {
        (sum / count as f64).sqrt()
    }
}

fn homogeneous_points(cs: &[Correspondence]) -> Vec<Vector4<f64>> {
    cs.iter().map(Correspondence::point_h).collect()
}

fn finish(
    method: Method,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    pose: Pose,
    flags: BTreeSet<Flag>,
    mut watch: Stopwatch,
) -> PnpResult {
    let reprojection_rms = reprojection_rms(cs, k, &pose);
    watch.lap("reprojection");
    PnpResult {
        method,
        pose,
        reprojection_rms,
        flags,
        timings: watch.timings,
    }
}

/// Rotation block of `K^-1 T_u^-1 P~ T_p` and its camera center.
fn declamp_plain(
    sol: &DltSolution,
    k: &CameraIntrinsics,
    tu: &PixelNormalization,
    tp: &PointNormalization,
) -> Result<(nalgebra::Matrix3<f64>, nalgebra::Vector3<f64>)> {
    let p = denormalize_projection(&sol.p, tu, tp);
    let x = k.inverse_matrix() * p.matrix();
    let r_acute = x.fixed_view::<3, 3>(0, 0).into_owned();
    let inv = r_acute
        .try_inverse()
        .ok_or(Error::DegenerateInput("rotation block of the solution is singular"))?;
    Ok((r_acute, -(inv * x.column(3))))
}

fn unweighted_pose(
    sol: &DltSolution,
    k: &CameraIntrinsics,
    tu: &PixelNormalization,
    tp: &PointNormalization,
) -> Result<Pose> {
    let (r_acute, center) = declamp_plain(sol, k, tu, tp)?;
    if r_acute.determinant() < 0.0 {
        return Err(Error::ReflectionDetected);
    }
    let rotation = nearest_rotation(&unit_determinant(&r_acute)?)?;
    recover_scale_and_position(&r_acute, &center, &rotation)
}

/// Classical DLT: no normalization, unweighted Procrustes.
pub fn solve_dlt(cs: &[Correspondence], k: &CameraIntrinsics) -> Result<PnpResult> {
    let mut watch = Stopwatch::start();
    let a = assemble(cs, None)?;
    watch.lap("assemble");
    let sol = solve_nullspace(&a, &homogeneous_points(cs))?;
    watch.lap("nullspace");
    let pose = unweighted_pose(
        &sol,
        k,
        &PixelNormalization::identity(),
        &PointNormalization::identity(),
    )?;
    watch.lap("se3");
    let mut flags = BTreeSet::new();
    if sol.mixed_depths {
        flags.insert(Flag::MixedDepths);
    }
    Ok(finish(Method::Dlt, cs, k, pose, flags, watch))
}

/// DLT on similarity-normalized pixels and points.
pub fn solve_ndlt(cs: &[Correspondence], k: &CameraIntrinsics) -> Result<PnpResult> {
    let mut watch = Stopwatch::start();
    if cs.len() < crate::dlt::MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: cs.len(),
            required: crate::dlt::MIN_POINTS,
        });
    }
    let (ncs, tu, tp) = normalize_correspondences(cs)?;
    watch.lap("normalize");
    let a = assemble(&ncs, None)?;
    watch.lap("assemble");
    let sol = solve_nullspace(&a, &homogeneous_points(&ncs))?;
    watch.lap("nullspace");
    let pose = unweighted_pose(&sol, k, &tu, &tp)?;
    watch.lap("se3");
    let mut flags = BTreeSet::new();
    if sol.mixed_depths {
        flags.insert(Flag::MixedDepths);
    }
    Ok(finish(Method::Ndlt, cs, k, pose, flags, watch))
}

/// Weighted solve in the normalized frame shared by the calibrated and
/// uncalibrated oDLT variants.
struct WeightedSolve {
    sol: DltSolution,
    tu: PixelNormalization,
    tp: PointNormalization,
    flags: BTreeSet<Flag>,
}

fn weighted_solve(cs: &[Correspondence], cfg: &SolverConfig, watch: &mut Stopwatch) -> Result<WeightedSolve> {
    cfg.validate()?;
    if cs.len() < crate::dlt::MIN_POINTS {
        return Err(Error::TooFewPoints {
            got: cs.len(),
            required: crate::dlt::MIN_POINTS,
        });
    }
    let mut flags = BTreeSet::new();
    let (ncs, tu, tp) = normalize_correspondences(cs)?;
    let points = homogeneous_points(&ncs);
    watch.lap("normalize");

    if cfg.unit_weights {
        let sol = solve_nullspace(&assemble(&ncs, None)?, &points)?;
        watch.lap("nullspace");
        if sol.mixed_depths {
            flags.insert(Flag::MixedDepths);
        }
        return Ok(WeightedSolve { sol, tu, tp, flags });
    }

    let preliminary = preliminary_from_normalized(&ncs, cfg.subset_size, cfg.seed)?;
    if preliminary.fallback_used {
        flags.insert(Flag::FallbackUsed);
    }
    watch.lap("preliminary");

    let mut estimate = preliminary.p;
    let mut sol = None;
    for _ in 0..cfg.reweight_iterations {
        let weights = point_weights(&WeightContext::new(estimate, cfg.sigma_u)?, &ncs)?;
        if !weights.dropped.is_empty() {
            flags.insert(Flag::DroppedPoints);
        }
        watch.lap("weights");
        let a = assemble(&ncs, Some(&weights.q))?;
        watch.lap("assemble");
        let s = solve_nullspace(&a, &points)?;
        watch.lap("nullspace");
        estimate = s.p;
        sol = Some(s);
    }
    let sol = sol.expect("at least one weighted pass");
    if sol.mixed_depths {
        flags.insert(Flag::MixedDepths);
    }
    Ok(WeightedSolve { sol, tu, tp, flags })
}

/// Optimally weighted DLT: preliminary subset estimate, analytic row
/// weights, weighted null-space solve, weighted Procrustes.
pub fn solve_odlt(cs: &[Correspondence], k: &CameraIntrinsics, cfg: &SolverConfig) -> Result<PnpResult> {
    let mut watch = Stopwatch::start();
    let WeightedSolve { sol, tu, tp, mut flags } = weighted_solve(cs, cfg, &mut watch)?;
    let pose = if cfg.unit_weights {
        unweighted_pose(&sol, k, &tu, &tp)?
    } else {
        let den = declamp_denormalize(&sol, k, &tu, &tp)?;
        if den.r_acute.determinant() < 0.0 {
            return Err(Error::ReflectionDetected);
        }
        let outcome = weighted_procrustes(&den.r_acute, &den.w, cfg.procrustes_iterations)?;
        if outcome.degenerate_weights {
            flags.insert(Flag::DegenerateWeights);
        }
        recover_scale_and_position(&den.r_acute, &den.center, &outcome.rotation)?
    };
    watch.lap("se3");
    Ok(finish(Method::Odlt, cs, k, pose, flags, watch))
}

/// [`solve_odlt`] followed by re-solving the translation for the final
/// rotation, with weights recomputed from the oDLT pose.
pub fn solve_odlt_lost(cs: &[Correspondence], k: &CameraIntrinsics, cfg: &SolverConfig) -> Result<PnpResult> {
    let base = solve_odlt(cs, k, cfg)?;
    let mut watch = Stopwatch::start();
    watch.timings = base.timings;
    let pose = base.pose;
    let weights: Vec<f64> = cs
        .iter()
        .map(|c| {
            let depth = pose.transform(&c.point).z;
            if depth > 0.0 {
                1.0 / (cfg.sigma_u * depth)
            } else {
                0.0
            }
        })
        .collect();
    let t = lost_translation(cs, k, pose.rotation(), &weights)?;
    let pose = Pose::from_parts(*pose.rotation(), -(pose.rotation().transpose() * t));
    watch.lap("lost");
    Ok(finish(Method::OdltLost, cs, k, pose, base.flags, watch))
}

/// Gauss-Newton refinement of the reprojection error from `init`.
pub fn refine_gauss_newton(
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    init: &Pose,
    cfg: &SolverConfig,
) -> Result<PnpResult> {
    cfg.validate()?;
    let mut watch = Stopwatch::start();
    let outcome = gauss_newton::refine(cs, k, init, cfg.gn_max_iters, cfg.gn_tol)?;
    watch.lap("gauss_newton");
    let mut flags = BTreeSet::new();
    if outcome.line_search_failed {
        flags.insert(Flag::LineSearchFailed);
    }
    Ok(finish(Method::NdltGn, cs, k, outcome.pose, flags, watch))
}

/// Projection matrix estimated without using the calibration, in the
/// original pixel and world frames. Supports [`Method::Dlt`], [`Method::Ndlt`]
/// and [`Method::Odlt`].
pub fn estimate_projection(cs: &[Correspondence], cfg: &SolverConfig) -> Result<ProjectionMatrix> {
    match cfg.method {
        Method::Dlt => Ok(solve_nullspace(&assemble(cs, None)?, &homogeneous_points(cs))?.p),
        Method::Ndlt => {
            let (ncs, tu, tp) = normalize_correspondences(cs)?;
            let sol = solve_nullspace(&assemble(&ncs, None)?, &homogeneous_points(&ncs))?;
            Ok(denormalize_projection(&sol.p, &tu, &tp))
        }
        Method::Odlt => {
            let mut watch = Stopwatch::start();
            let w = weighted_solve(cs, cfg, &mut watch)?;
            Ok(denormalize_projection(&w.sol.p, &w.tu, &w.tp))
        }
        other => Err(Error::InvalidConfig(format!(
            "{other} does not produce an uncalibrated projection"
        ))),
    }
}

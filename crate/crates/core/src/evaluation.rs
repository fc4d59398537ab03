//! Synthetic scenes, error metrics and Monte Carlo sweeps.

use std::time::Instant;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{decompose_projection, project_pose, rotation_angle_deg, CameraIntrinsics, Correspondence, Pose};
use crate::solvers::{estimate_projection, solve, Method, PnpResult, SolverConfig};

pub const DEFAULT_TRIALS: usize = 500;
pub const DEFAULT_N_LIST: [usize; 6] = [10, 20, 50, 100, 200, 500];
pub const DEFAULT_SIGMA_LIST: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 5.0];
/// Gaussian pixel noise is resampled beyond this many standard deviations.
pub const NOISE_TRUNCATION: f64 = 6.0;

/// Axis-aligned box the scene points are drawn from, camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxRegion {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl BoxRegion {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if (0..3).any(|i| !(min[i] < max[i])) {
            return Err(Error::InvalidConfig(
                "box must have positive extent on every axis".into(),
            ));
        }
        Ok(Self { min, max })
    }

    /// `[-2, 2] x [-2, 2] x [4, 8]`.
    pub fn centered() -> Self {
        Self {
            min: Vector3::new(-2.0, -2.0, 4.0),
            max: Vector3::new(2.0, 2.0, 8.0),
        }
    }

    /// `[1, 2] x [1, 2] x [4, 8]`.
    pub fn uncentered() -> Self {
        Self {
            min: Vector3::new(1.0, 1.0, 4.0),
            max: Vector3::new(2.0, 2.0, 8.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub region: BoxRegion,
    pub n: usize,
    pub sigma_u: f64,
    pub intrinsics: CameraIntrinsics,
    /// Nominal image size. Points projecting outside it are kept.
    pub image_size: (u32, u32),
    pub trials: usize,
    pub seed: u64,
    /// Resample noise draws beyond [`NOISE_TRUNCATION`] sigmas.
    pub truncate_noise: bool,
}

impl SyntheticScenario {
    pub fn new(region: BoxRegion, n: usize, sigma_u: f64, trials: usize, seed: u64) -> Self {
        Self {
            region,
            n,
            sigma_u,
            intrinsics: CameraIntrinsics {
                fx: 800.0,
                fy: 800.0,
                cx: 320.0,
                cy: 240.0,
                skew: 0.0,
            },
            image_size: (640, 480),
            trials,
            seed,
            truncate_noise: true,
        }
    }

    pub fn centered(n: usize, sigma_u: f64, trials: usize, seed: u64) -> Self {
        Self::new(BoxRegion::centered(), n, sigma_u, trials, seed)
    }

    pub fn uncentered(n: usize, sigma_u: f64, trials: usize, seed: u64) -> Self {
        Self::new(BoxRegion::uncentered(), n, sigma_u, trials, seed)
    }

    pub fn validate(&self) -> Result<()> {
        BoxRegion::new(self.region.min, self.region.max)?;
        if self.n < crate::dlt::MIN_POINTS {
            return Err(Error::InvalidConfig(format!("n must be at least 6, got {}", self.n)));
        }
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if !(self.sigma_u >= 0.0 && self.sigma_u.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_u must be nonnegative, got {}",
                self.sigma_u
            )));
        }
        Ok(())
    }
}

/// Independent random stream for one trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Standard normal draw, optionally truncated at [`NOISE_TRUNCATION`].
pub fn standard_normal(rng: &mut ChaCha8Rng, truncate: bool) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if !truncate || z.abs() <= NOISE_TRUNCATION {
            return z;
        }
    }
}

/// Points uniform in the box seen by a camera at the origin looking along
/// `+z`, with Gaussian pixel noise. Deterministic in `(seed, trial)`.
pub fn generate_scene(sc: &SyntheticScenario, trial: usize) -> (Vec<Correspondence>, Pose) {
    let mut rng = trial_rng(sc.seed, trial as u64);
    let truth = Pose::identity();
    let (lo, hi) = (sc.region.min, sc.region.max);
    let cs = (0..sc.n)
        .map(|_| {
            let p = Vector3::from_fn(|i, _| rng.random_range(lo[i]..hi[i]));
            let mut u = project_pose(&sc.intrinsics, &truth, &p).expect("box has positive depth");
            if sc.sigma_u > 0.0 {
                let noise = Vector2::new(
                    standard_normal(&mut rng, sc.truncate_noise),
                    standard_normal(&mut rng, sc.truncate_noise),
                );
                u += noise * sc.sigma_u;
            }
            Correspondence { point: p, pixel: u }
        })
        .collect();
    (cs, truth)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub rot_err_deg: f64,
    /// Camera center error, world units.
    pub pos_err: f64,
    /// Mean Euclidean distance between measurements and reprojections.
    pub mean_reproj_err: f64,
    /// Solver wall time in seconds.
    pub runtime: f64,
}

pub fn mean_reprojection_error(cs: &[Correspondence], k: &CameraIntrinsics, pose: &Pose) -> f64 {
    let total: f64 = cs
        .iter()
        .map(|c| match project_pose(k, pose, &c.point) {
            Ok(u) => (u - c.pixel).norm(),
            Err(_) => f64::INFINITY,
        })
        .sum();
    total / cs.len() as f64
}

pub fn compute_metrics(result: &PnpResult, truth: &Pose, cs: &[Correspondence], k: &CameraIntrinsics) -> TrialMetrics {
    TrialMetrics {
        rot_err_deg: rotation_angle_deg(result.pose.rotation(), truth.rotation()),
        pos_err: (result.pose.center() - truth.center()).norm(),
        mean_reproj_err: mean_reprojection_error(cs, k, &result.pose),
        runtime: result.timings.total().as_secs_f64(),
    }
}

/// Monte Carlo summary for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodAggregate {
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub rot_rmse_deg: f64,
    pub pos_rmse: f64,
    pub mean_reproj_px: f64,
    /// Mean solver runtime in seconds; `None` when timing was disabled.
    pub mean_runtime: Option<f64>,
}

impl MethodAggregate {
    /// Aggregates successful trials, counting `None` entries as failures.
    pub fn from_trials(method: Method, trials: &[Option<TrialMetrics>], timed: bool) -> Self {
        let ok: Vec<&TrialMetrics> = trials.iter().flatten().collect();
        let n = ok.len() as f64;
        let rms = |f: fn(&TrialMetrics) -> f64| (ok.iter().map(|m| f(m).powi(2)).sum::<f64>() / n).sqrt();
        let mean = |f: fn(&TrialMetrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / n;
        Self {
            method,
            trials: trials.len(),
            failures: trials.len() - ok.len(),
            rot_rmse_deg: rms(|m| m.rot_err_deg),
            pos_rmse: rms(|m| m.pos_err),
            mean_reproj_px: mean(|m| m.mean_reproj_err),
            mean_runtime: timed.then(|| mean(|m| m.runtime)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Measure runtimes. Timed runs execute serially.
    pub timing: bool,
    /// Repetitions per timed solve; the median is reported.
    pub timing_reps: usize,
    /// Spread trials over the rayon pool when not timing.
    pub parallel: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            timing: true,
            timing_reps: 1,
            parallel: true,
        }
    }
}

fn timed_solve(
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    cfg: &SolverConfig,
    reps: usize,
) -> Option<(PnpResult, f64)> {
    let mut times = Vec::with_capacity(reps.max(1));
    let mut result = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let r = solve(cs, k, cfg);
        times.push(start.elapsed().as_secs_f64());
        result = Some(r.ok()?);
    }
    times.sort_by(f64::total_cmp);
    Some((result?, times[times.len() / 2]))
}

fn run_trial(
    sc: &SyntheticScenario,
    methods: &[SolverConfig],
    trial: usize,
    opts: &RunOptions,
) -> Vec<Option<TrialMetrics>> {
    let (cs, truth) = generate_scene(sc, trial);
    methods
        .iter()
        .map(|cfg| {
            let (result, runtime) = if opts.timing {
                timed_solve(&cs, &sc.intrinsics, cfg, opts.timing_reps)?
            } else {
                (solve(&cs, &sc.intrinsics, cfg).ok()?, 0.0)
            };
            let mut m = compute_metrics(&result, &truth, &cs, &sc.intrinsics);
            m.runtime = runtime;
            Some(m)
        })
        .collect()
}

/// Runs every method on the same sequence of scenes and aggregates the
/// per-trial metrics. Failed solves are counted, not propagated.
pub fn run_monte_carlo(
    sc: &SyntheticScenario,
    methods: &[SolverConfig],
    opts: &RunOptions,
) -> Result<Vec<MethodAggregate>> {
    sc.validate()?;
    for m in methods {
        m.validate()?;
    }
    let per_trial: Vec<Vec<Option<TrialMetrics>>> = if opts.parallel && !opts.timing {
        (0..sc.trials)
            .into_par_iter()
            .map(|t| run_trial(sc, methods, t, opts))
            .collect()
    } else {
        (0..sc.trials).map(|t| run_trial(sc, methods, t, opts)).collect()
    };
    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, cfg)| {
            let column: Vec<_> = per_trial.iter().map(|row| row[j]).collect();
            MethodAggregate::from_trials(cfg.method, &column, opts.timing)
        })
        .collect())
}

/// RMSE of the focal lengths and principal point recovered without using
/// the calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicsRmse {
    pub method: Method,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub failures: usize,
}

/// Estimates `P` with nDLT and oDLT, decomposes it into `K R [I, -r]`, and
/// reports the per-parameter RMSE of `K` against the scenario's intrinsics.
pub fn intrinsics_rmse_experiment(sc: &SyntheticScenario, cfg: &SolverConfig) -> Result<Vec<IntrinsicsRmse>> {
    sc.validate()?;
    let methods = [Method::Ndlt, Method::Odlt];
    let per_trial: Vec<Vec<Option<[f64; 4]>>> = (0..sc.trials)
        .into_par_iter()
        .map(|t| {
            let (cs, _) = generate_scene(sc, t);
            methods
                .iter()
                .map(|&method| {
                    let c = SolverConfig { method, ..cfg.clone() };
                    let p = estimate_projection(&cs, &c).ok()?;
                    let (k, _) = decompose_projection(&p).ok()?;
                    let truth = &sc.intrinsics;
                    Some([k.fx - truth.fx, k.fy - truth.fy, k.cx - truth.cx, k.cy - truth.cy])
                })
                .collect()
        })
        .collect();
    Ok(methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let ok: Vec<[f64; 4]> = per_trial.iter().filter_map(|row| row[j]).collect();
            let n = ok.len() as f64;
            let rms = |i: usize| (ok.iter().map(|e| e[i] * e[i]).sum::<f64>() / n).sqrt();
            IntrinsicsRmse {
                method,
                fx: rms(0),
                fy: rms(1),
                cx: rms(2),
                cy: rms(3),
                failures: sc.trials - ok.len(),
            }
        })
        .collect())
}

/// Rotation of `angle_deg` degrees about `axis`, handy for metric checks.
pub fn axis_angle(axis: Vector3<f64>, angle_deg: f64) -> Matrix3<f64> {
    crate::geometry::exp_so3(&(axis.normalize() * angle_deg.to_radians()))
}

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use odlt::colmap::{build_problems, parse_model, ImageProblem};
use odlt::evaluation::{compute_metrics, standard_normal, trial_rng, MethodAggregate, TrialMetrics};
use odlt::solvers::{solve, PnpResult};
use odlt::{Method, SolverConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{runtime_field, RunManifest};
use crate::{input_err, method_names, open_output, parse_methods, CliError, MethodList};

#[derive(Args, Debug)]
pub struct ColmapArgs {
    /// Directory holding cameras.txt, images.txt and points3D.txt. Repeat
    /// for several scenes.
    #[arg(long, required = true)]
    model_dir: Vec<PathBuf>,
    #[arg(long, value_parser = parse_methods, default_value = "dlt,ndlt,odlt,odlt+lost,ndlt+gn")]
    methods: MethodList,
    /// Images with fewer correspondences are skipped.
    #[arg(long, default_value_t = 6)]
    min_points: usize,
    /// Standard deviation of Gaussian noise added to every keypoint, pixels.
    #[arg(long, default_value_t = 0.0)]
    noise_px: f64,
    /// Pixel noise assumed by the weighted solvers.
    #[arg(long, default_value_t = 1.0)]
    sigma_u: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Aggregate CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-image detail CSV.
    #[arg(long)]
    per_image: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Serialize)]
struct Config<'a> {
    model_dirs: Vec<String>,
    methods: Vec<&'static str>,
    min_points: usize,
    noise_px: f64,
    sigma_u: f64,
    seed: u64,
    per_image: Option<&'a PathBuf>,
    timing: bool,
}

fn scene_name(dir: &std::path::Path) -> String {
    dir.canonicalize()
        .ok()
        .as_deref()
        .unwrap_or(dir)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn add_noise(problem: &mut ImageProblem, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = trial_rng(seed, problem.image_id as u64);
    for c in &mut problem.correspondences {
        c.pixel.x += sigma * standard_normal(&mut rng, true);
        c.pixel.y += sigma * standard_normal(&mut rng, true);
    }
}

struct ImageOutcome {
    result: Result<(PnpResult, TrialMetrics), odlt::Error>,
}

fn solve_image(problem: &ImageProblem, cfg: &SolverConfig, timing: bool) -> ImageOutcome {
    let start = Instant::now();
    let result = solve(&problem.correspondences, &problem.intrinsics, cfg).map(|r| {
        let elapsed = start.elapsed().as_secs_f64();
        let mut m = compute_metrics(&r, &problem.truth, &problem.correspondences, &problem.intrinsics);
        m.runtime = if timing { elapsed } else { 0.0 };
        (r, m)
    });
    ImageOutcome { result }
}

pub fn run(args: ColmapArgs) -> Result<(), CliError> {
    let methods: Vec<Method> = args.methods.0.clone();
    if !(args.noise_px >= 0.0 && args.noise_px.is_finite()) {
        return Err(input_err(anyhow::anyhow!("--noise-px must be nonnegative")));
    }
    let timing = !args.no_timing;
    let cfgs: Vec<SolverConfig> = methods
        .iter()
        .map(|&m| SolverConfig {
            sigma_u: args.sigma_u,
            seed: args.seed,
            ..SolverConfig::with_method(m)
        })
        .collect();
    for cfg in &cfgs {
        cfg.validate().map_err(crate::classify)?;
    }

    let mut out = open_output(args.out.as_ref())?;
    let config = Config {
        model_dirs: args.model_dir.iter().map(|d| d.display().to_string()).collect(),
        methods: method_names(&methods),
        min_points: args.min_points,
        noise_px: args.noise_px,
        sigma_u: args.sigma_u,
        seed: args.seed,
        per_image: args.per_image.as_ref(),
        timing,
    };
    let manifest = RunManifest {
        command: "eval-colmap",
        config: &config,
        seed: args.seed,
    };
    manifest.write_to(&mut out).map_err(input_err)?;
    let mut agg = csv::Writer::from_writer(out);
    agg.write_record([
        "scene",
        "method",
        "images",
        "skipped",
        "failures",
        "rot_rmse_deg",
        "pos_rmse_m",
        "mean_reproj_px",
        "mean_runtime_ms",
    ])
    .map_err(input_err)?;

    let mut detail = match &args.per_image {
        Some(path) => {
            let mut w = open_output(Some(path))?;
            manifest.write_to(&mut w).map_err(input_err)?;
            let mut w = csv::Writer::from_writer(w);
            w.write_record([
                "scene",
                "image_id",
                "image",
                "n",
                "method",
                "rot_err_deg",
                "pos_err_m",
                "mean_reproj_px",
                "runtime_ms",
                "flags",
                "status",
            ])
            .map_err(input_err)?;
            Some(w)
        }
        None => None,
    };

    for dir in &args.model_dir {
        let scene = scene_name(dir);
        let model = parse_model(dir).map_err(input_err)?;
        let mut problems = build_problems(&model, args.min_points);
        if !problems.skipped.is_empty() {
            log::warn!(
                "{scene}: skipped {} images below {} points",
                problems.skipped.len(),
                args.min_points
            );
        }
        for p in &mut problems.problems {
            add_noise(p, args.noise_px, args.seed);
        }

        for cfg in &cfgs {
            let outcomes: Vec<ImageOutcome> = if timing {
                problems.problems.iter().map(|p| solve_image(p, cfg, true)).collect()
            } else {
                problems
                    .problems
                    .par_iter()
                    .map(|p| solve_image(p, cfg, false))
                    .collect()
            };
            let trials: Vec<Option<TrialMetrics>> = outcomes
                .iter()
                .map(|o| o.result.as_ref().ok().map(|(_, m)| *m))
                .collect();
            let row = MethodAggregate::from_trials(cfg.method, &trials, timing);
            agg.write_record([
                scene.clone(),
                cfg.method.name().to_string(),
                row.trials.to_string(),
                problems.skipped.len().to_string(),
                row.failures.to_string(),
                format!("{:.9e}", row.rot_rmse_deg),
                format!("{:.9e}", row.pos_rmse),
                format!("{:.9e}", row.mean_reproj_px),
                runtime_field(row.mean_runtime),
            ])
            .map_err(input_err)?;

            if let Some(w) = detail.as_mut() {
                for (p, o) in problems.problems.iter().zip(&outcomes) {
                    let (metrics, flags, status) = match &o.result {
                        Ok((r, m)) => (
                            [
                                format!("{:.9e}", m.rot_err_deg),
                                format!("{:.9e}", m.pos_err),
                                format!("{:.9e}", m.mean_reproj_err),
                                runtime_field(timing.then_some(m.runtime)),
                            ],
                            r.flags.iter().map(|f| f.name()).collect::<Vec<_>>().join("|"),
                            "ok".to_string(),
                        ),
                        Err(e) => (
                            ["NA".into(), "NA".into(), "NA".into(), "NA".into()],
                            String::new(),
                            format!("error: {e}"),
                        ),
                    };
                    let [rot, pos, reproj, rt] = metrics;
                    w.write_record([
                        scene.clone(),
                        p.image_id.to_string(),
                        p.name.clone(),
                        p.correspondences.len().to_string(),
                        cfg.method.name().to_string(),
                        rot,
                        pos,
                        reproj,
                        rt,
                        flags,
                        status,
                    ])
                    .map_err(input_err)?;
                }
            }
        }
    }
    agg.flush().map_err(input_err)?;
    if let Some(mut w) = detail {
        w.flush().map_err(input_err)?;
    }
    Ok(())
}

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use odlt::geometry::rotation_to_quat;
use odlt::io::read_problem;
use odlt::solvers::solve;
use odlt::{Method, SolverConfig};

use crate::{classify, input_err, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    JsonLines,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: odlt::Error| e.to_string())
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Correspondence file: "fx fy cx cy skew" then "px py X Y Z" per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_method, default_value = "odlt+lost")]
    method: Method,
    #[arg(long, default_value_t = 1.0)]
    sigma_u: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

pub fn run(args: SolveArgs) -> Result<(), CliError> {
    let problem = read_problem(&args.input).map_err(|e| input_err(anyhow::anyhow!("{}: {e}", args.input.display())))?;
    let cfg = SolverConfig {
        sigma_u: args.sigma_u,
        seed: args.seed,
        ..SolverConfig::with_method(args.method)
    };
    cfg.validate().map_err(classify)?;
    let r = solve(&problem.correspondences, &problem.intrinsics, &cfg).map_err(classify)?;
    let rot = r.pose.rotation();
    let q = rotation_to_quat(rot);
    let c = r.pose.center();
    let flags: Vec<&str> = r.flags.iter().map(|f| f.name()).collect();
    let total_ms = r.timings.total().as_secs_f64() * 1e3;

    match args.format {
        Format::Text => {
            println!("method: {}", r.method);
            println!("points: {}", problem.correspondences.len());
            println!("rotation:");
            for i in 0..3 {
                println!(
                    "  {:>22.15e} {:>22.15e} {:>22.15e}",
                    rot[(i, 0)],
                    rot[(i, 1)],
                    rot[(i, 2)]
                );
            }
            println!(
                "quaternion (w x y z): {:.15e} {:.15e} {:.15e} {:.15e}",
                q[0], q[1], q[2], q[3]
            );
            println!("center: {:.15e} {:.15e} {:.15e}", c.x, c.y, c.z);
            println!("reprojection_rms_px: {:.9e}", r.reprojection_rms);
            println!(
                "flags: {}",
                if flags.is_empty() {
                    "none".to_string()
                } else {
                    flags.join(",")
                }
            );
            println!("runtime_ms: {total_ms:.6}");
            for (stage, d) in &r.timings.stages {
                println!("  {stage}: {:.6}", d.as_secs_f64() * 1e3);
            }
        }
        Format::JsonLines => {
            let rows: Vec<[f64; 3]> = (0..3).map(|i| [rot[(i, 0)], rot[(i, 1)], rot[(i, 2)]]).collect();
            let stages: serde_json::Map<String, serde_json::Value> = r
                .timings
                .stages
                .iter()
                .map(|(s, d)| (s.to_string(), serde_json::json!(d.as_secs_f64() * 1e3)))
                .collect();
            let line = serde_json::json!({
                "method": r.method.name(),
                "points": problem.correspondences.len(),
                "rotation": rows,
                "quaternion": q,
                "center": [c.x, c.y, c.z],
                "reprojection_rms_px": r.reprojection_rms,
                "flags": flags,
                "runtime_ms": total_ms,
                "stages_ms": stages,
            });
            println!("{line}");
        }
    }
    Ok(())
}

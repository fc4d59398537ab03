//! `odlt` command-line tool: synthetic Monte Carlo sweeps, COLMAP model
//! evaluation and single-problem solves.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
//! `ODLT_THREADS` caps the worker pool.

mod colmap_eval;
mod manifest;
mod solve;
mod synthetic;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use odlt::Method;
use serde::Serialize;

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Numerical(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) | CliError::Numerical(e) => write!(f, "{e:#}"),
        }
    }
}

/// Solver errors caused by the caller's data or flags count as input
/// errors; everything else is numerical.
pub fn classify(err: odlt::Error) -> CliError {
    use odlt::Error as E;
    match err {
        E::TooFewPoints { .. } | E::InvalidConfig(_) | E::WeightLength { .. } | E::SingularCalibration => {
            CliError::Input(err.into())
        }
        _ => CliError::Numerical(err.into()),
    }
}

pub fn input_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Input(e.into())
}

#[derive(Parser, Debug)]
#[command(name = "odlt", version, about = "Optimally weighted DLT pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monte Carlo sweep over point counts and noise levels.
    Synthetic(synthetic::SyntheticArgs),
    /// Per-image pose estimation on COLMAP text models.
    EvalColmap(colmap_eval::ColmapArgs),
    /// Solve one problem read from a correspondence file.
    Solve(solve::SolveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Centered,
    Uncentered,
}

/// Methods selected on the command line, in the given order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodList(pub Vec<Method>);

/// Parses a comma-separated method list such as `ndlt,odlt+lost`.
pub fn parse_methods(s: &str) -> Result<MethodList, String> {
    let methods = s
        .split(',')
        .map(|m| m.trim().parse::<Method>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err("empty method list".into());
    }
    Ok(MethodList(methods))
}

pub fn method_names(methods: &[Method]) -> Vec<&'static str> {
    methods.iter().map(Method::name).collect()
}

/// Output destination: a file, or stdout when absent or `-`.
pub fn open_output(path: Option<&PathBuf>) -> Result<Box<dyn std::io::Write>, CliError> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let f = std::fs::File::create(p)
                .map_err(|e| input_err(anyhow::anyhow!("cannot create {}: {e}", p.display())))?;
            Ok(Box::new(std::io::BufWriter::new(f)))
        }
        _ => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("ODLT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().ok().filter(|&t| t > 0).ok_or_else(|| {
        input_err(anyhow::anyhow!(
            "ODLT_THREADS must be a positive integer, got '{value}'"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Numerical(e.into()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Synthetic(args) => synthetic::run(args),
        Command::EvalColmap(args) => colmap_eval::run(args),
        Command::Solve(args) => solve::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command-line front door: config-driven pipelines from geometry through
//! asymptotics, Birman-Schwinger and the direct solver, emitting CSV reports.
//!
//! Exit codes: 0 success, 1 config error, 2 no bound state predicted,
//! 3 validation or runtime failure.

mod config;
mod pipelines;

use clap::{Parser, Subcommand};
use pipelines::{RunError, Runner};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "layerbound", version, about = "Curvature-induced bound states in mildly curved hard-wall layers")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides [output].dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Mode cutoff override (sets modes.n/bs/direct and widens nu).
    #[arg(long, global = true)]
    modes: Option<usize>,

    /// Solver tolerance override.
    #[arg(long, global = true)]
    tol: Option<f64>,

    /// Suppress progress prints (files are still written).
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Curvature fields, layer constants and total-curvature diagnostics.
    Geometry,
    /// w1 by the three routes, per-mode table, thin-layer comparison.
    Asymptotics,
    /// Weak-coupling expansion over the lambda sweep.
    Planar,
    /// Birman-Schwinger implicit equation (plus root finder when resolvable).
    Bs,
    /// Direct mode-coupled eigensolve with an h-refinement ladder.
    Direct,
    /// Full layer pipeline: geometry, w1 routes, eps sweep, bracket.
    PipelineLayer,
    /// Full planar pipeline: expansion vs BS vs direct over lambda.
    PipelinePlanar,
    /// Fast internal cross-checks.
    Selftest,
}

fn run(cli: Cli) -> Result<(), RunError> {
    let mut cfg = match &cli.config {
        Some(path) => config::load(path)?,
        None => {
            if matches!(cli.cmd, Cmd::Selftest) {
                // The selftest needs no inputs; use an inert default config.
                toml::from_str("[layer]\na = 1.5707963267948966\n")
                    .map_err(|e| RunError::Config(e.to_string()))?
            } else {
                return Err(RunError::Config("--config PATH is required".into()));
            }
        }
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.display().to_string();
    }
    if let Some(n) = cli.modes {
        cfg.modes.n = n.max(2);
        cfg.modes.bs = n.max(2);
        cfg.modes.direct = n.max(1);
        cfg.modes.nu = cfg.modes.nu.max(2 * n.max(2));
    }
    if let Some(tol) = cli.tol {
        cfg.solver.tol = tol;
    }
    config::validate(&cfg)?;
    let runner = Runner::new(cfg, cli.quiet)?;
    match cli.cmd {
        Cmd::Geometry => runner.run_geometry(),
        Cmd::Asymptotics => runner.run_asymptotics(),
        Cmd::Planar => runner.run_planar(),
        Cmd::Bs => runner.run_bs(),
        Cmd::Direct => runner.run_direct(),
        Cmd::PipelineLayer => runner.run_layer_pipeline(),
        Cmd::PipelinePlanar => runner.run_planar_pipeline(),
        Cmd::Selftest => runner.run_selftest(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(RunError::NoBoundState(m)) => {
            eprintln!("no bound state predicted: {m}");
            ExitCode::from(2)
        }
        Err(RunError::Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

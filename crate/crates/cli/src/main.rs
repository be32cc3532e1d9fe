//! Reproducible experiment runner for the roughflow laboratory.
//!
//! One subcommand per experiment kind; a TOML config file supplies defaults
//! and CLI flags override it. Every run is a deterministic function of
//! (config, seed): sample streams are derived per (seed, index, purpose), so
//! worker count cannot change any artifact byte. Exit code 0 means every
//! gated metric passed, 1 means a metric failed or a computation errored,
//! 2 means the invocation or configuration was invalid.

mod config;
mod report;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{load_file, resolve, ExperimentConfig, Kind, Overrides};
use report::{emit_report, sig12, Format, Metric, RunReport};

/// Errors of the harness; the variant picks the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid flags or configuration: exit 2.
    #[error("usage: {0}")]
    Usage(String),
    /// Numerical or model failure inside a run: exit 1.
    #[error("{0}")]
    Core(#[from] roughflow::error::Error),
    /// Artifact I/O failure: exit 1.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Parser)]
#[command(
    name = "roughflow",
    version,
    about = "Numerical experiments for rough differential equations with irregular drift",
    after_help = "Exit codes: 0 all gated metrics pass, 1 metric or numerical failure, 2 usage error."
)]
struct Cli {
    #[command(subcommand)]
    kind: KindCmd,
}

/// Flags shared by every experiment kind; unset values fall back to the
/// config file, then to per-kind defaults. The seed has no default.
#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed of every random stream (required here or in the file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for reports and data artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Grid cells, a power of two in [8, 2^20].
    #[arg(long)]
    grid: Option<usize>,
    /// Hurst parameter of the fractional driver, in (0.05, 0.95).
    #[arg(long)]
    hurst: Option<f64>,
    /// Truncation degree of the lift, 1 to 3.
    #[arg(long)]
    degree: Option<usize>,
    /// Regularity exponent of the synthetic drift, in (0, 10].
    #[arg(long)]
    kappa: Option<f64>,
    /// Noise field: identity | elliptic.
    #[arg(long)]
    sigma: Option<String>,
    /// Drift field: constant | smooth | weierstrass | lp-block.
    #[arg(long)]
    drift: Option<String>,
    /// Refinement factor of the lift (must divide the grid).
    #[arg(long)]
    refinement: Option<usize>,
}

#[derive(Subcommand)]
enum KindCmd {
    /// Draw driver paths and gate increment variances against the model.
    Sample(CommonArgs),
    /// Lift a sampled path and gate the group-structure bookkeeping.
    Lift(CommonArgs),
    /// Solve one drifted equation by both routes and compare them.
    Solve(CommonArgs),
    /// Fitted convergence orders: smooth closed form, residual decay,
    /// direct-vs-transform gap under refinement.
    Convergence(CommonArgs),
    /// Frequency decay of averaged oscillatory probes (slope -1/(2H)).
    Averaging(CommonArgs),
    /// Covariance matrix checks, eigenvalue scaling, smoothing decay.
    Malliavin(CommonArgs),
    /// Split-start stability across sample paths.
    Uniqueness(CommonArgs),
    /// Dyadic blocks, synthetic drift recovery, pathwise certificate.
    Spaces(CommonArgs),
}

impl KindCmd {
    fn split(self) -> (Kind, CommonArgs) {
        match self {
            KindCmd::Sample(a) => (Kind::Sample, a),
            KindCmd::Lift(a) => (Kind::Lift, a),
            KindCmd::Solve(a) => (Kind::Solve, a),
            KindCmd::Convergence(a) => (Kind::Convergence, a),
            KindCmd::Averaging(a) => (Kind::Averaging, a),
            KindCmd::Malliavin(a) => (Kind::Malliavin, a),
            KindCmd::Uniqueness(a) => (Kind::Uniqueness, a),
            KindCmd::Spaces(a) => (Kind::Spaces, a),
        }
    }
}

fn dispatch(cfg: &ExperimentConfig) -> Result<(Vec<Metric>, Vec<String>), CliError> {
    match cfg.kind {
        Kind::Sample => runs::run_sample(cfg),
        Kind::Lift => runs::run_lift(cfg),
        Kind::Solve => runs::run_solve(cfg),
        Kind::Convergence => runs::run_convergence(cfg),
        Kind::Averaging => runs::run_averaging(cfg),
        Kind::Malliavin => runs::run_malliavin(cfg),
        Kind::Uniqueness => runs::run_uniqueness(cfg),
        Kind::Spaces => runs::run_spaces(cfg),
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (kind, args) = cli.kind.split();
    let file = args.config.as_deref().map(load_file).transpose()?;
    let flags = Overrides {
        seed: args.seed,
        hurst: args.hurst,
        degree: args.degree,
        grid: args.grid,
        refinement: args.refinement,
        samples: args.samples,
        sigma: args.sigma,
        drift: args.drift,
        kappa: args.kappa,
        out: args.out,
    };
    let cfg = resolve(kind, file, flags)?;

    let clock = Instant::now();
    let (metrics, artifacts) = dispatch(&cfg)?;
    let report = RunReport {
        config: cfg.clone(),
        metrics,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        artifacts,
    };
    emit_report(&report, &cfg.out, &[Format::Json, Format::Csv, Format::MarkdownSummary])?;

    for m in &report.metrics {
        println!(
            "[{}] {} = {} ({} target {} tol {})",
            if m.pass { "pass" } else { "FAIL" },
            m.name,
            sig12(m.value),
            match m.mode {
                report::GateMode::Within => "within",
                report::GateMode::AtMost => "at-most",
                report::GateMode::AtLeast => "at-least",
                report::GateMode::Report => "report",
            },
            sig12(m.target),
            sig12(m.tolerance),
        );
    }
    let ok = report.all_pass();
    println!(
        "RESULT: {} ({} metrics, artifacts in {})",
        if ok { "PASS" } else { "FAIL" },
        report.metrics.len(),
        cfg.out.display()
    );
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ CliError::Usage(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

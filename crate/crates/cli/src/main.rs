//! `blowup`: runs the laboratory's experiments and writes hashed artifacts.
//!
//! Exit status: 0 success, 1 configuration or usage error, 2 numerical
//! failure (a `diagnostics.json` is left in the output directory).

mod config;
mod experiments;
mod output;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::RunConfig;
use experiments::{Experiment, Failure};
use output::RunDir;

/// Default output root when `--out` is absent.
const OUT_ENV: &str = "BLOWUP_LAB_OUT";

#[derive(Parser)]
#[command(name = "blowup", version, about = "Blow-up laboratory for u_tt - Δu = |u|^{p-1}u lnᵃ(ln(10+u²))")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blow-up ODE: trajectory, blow-up time, first-integral drift
    Ode(RunArgs),
    /// Finite-difference evolution and blow-up surface
    Wave(RunArgs),
    /// Similarity frames, Lyapunov functionals, Hardy ratios
    Similarity(RunArgs),
    /// Blow-up rate quotient k̂, K̂
    Rate(RunArgs),
    /// Picard iteration of the Duhamel map
    Duhamel(RunArgs),
    /// Wave run, surface, similarity and rate in one directory
    Pipeline(RunArgs),
    /// Merge run directories into report.json and report.gp
    Report { dir: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $BLOWUP_LAB_OUT/<experiment>, else runs/<experiment>)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `section.key=value`, applied after the file; repeatable
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn out_dir(args: &RunArgs, experiment: Experiment) -> PathBuf {
    if let Some(out) = &args.out {
        return out.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(experiment.name())
}

fn run(experiment: Experiment, args: &RunArgs) -> ExitCode {
    let cfg = match RunConfig::load(args.config.as_deref(), &args.overrides, args.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    let dir = out_dir(args, experiment);
    let mut out = match RunDir::create(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot create {}: {e}", dir.display());
            return ExitCode::from(1);
        }
    };
    let config_json = serde_json::to_value(&cfg).unwrap_or_default();
    match experiment.run(&cfg, &mut out) {
        Ok(summary) => match out.finish(experiment.name(), "ok", config_json, summary) {
            Ok(path) => {
                println!("{}", path.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("writing manifest: {e}");
                ExitCode::from(2)
            }
        },
        Err(failure) => {
            let (stage, message) = match &failure {
                Failure::Numerical { stage, message } => (*stage, message.clone()),
                Failure::Io(e) => ("io", e.to_string()),
            };
            eprintln!("{} failed at {stage}: {message}", experiment.name());
            let diag = json!({ "experiment": experiment.name(), "stage": stage, "error": message });
            let written = out
                .write_json("diagnostics.json", &diag)
                .and_then(|_| out.finish(experiment.name(), "failed", config_json, diag.clone()));
            if let Err(e) = written {
                eprintln!("writing diagnostics: {e}");
            }
            ExitCode::from(2)
        }
    }
}

fn report(dir: &Path) -> ExitCode {
    let built = match report::build(dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("report: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = report::write(dir, &built) {
        eprintln!("report: {e}");
        return ExitCode::from(1);
    }
    println!("{}", dir.join("report.json").display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    // usage errors are configuration errors (clap alone would exit 2)
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Command::Ode(a) => run(Experiment::Ode, a),
        Command::Wave(a) => run(Experiment::Wave, a),
        Command::Similarity(a) => run(Experiment::Similarity, a),
        Command::Rate(a) => run(Experiment::Rate, a),
        Command::Duhamel(a) => run(Experiment::Duhamel, a),
        Command::Pipeline(a) => run(Experiment::Pipeline, a),
        Command::Report { dir } => report(dir),
    }
}

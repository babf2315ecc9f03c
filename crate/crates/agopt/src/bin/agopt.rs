use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agopt::config::ExperimentConfig;
use agopt::runner::{bound_lines, run_experiment, write_artifacts};
use agopt::selftest;
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "agopt",
    version,
    about = "Accelerated gradient experiments and bound verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a config and write traces, bounds and summaries.
    Run(RunArgs),
    /// Check the configured bounds without writing traces.
    Verify(RunArgs),
    /// Run a config whose [sweep] section lists horizons, sigmas or policies.
    Sweep(RunArgs),
    /// Run the built-in property suites.
    Selftest(Common),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config (default: `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replications per cell, overriding the config.
    #[arg(long)]
    reps: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Print nothing but errors.
    #[arg(long)]
    quiet: bool,
}

enum Mode {
    Run,
    Verify,
    Sweep,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(reps) = args.reps {
        config.replications = Some(reps);
    }
    if let Some(out) = &args.out {
        config.out = Some(out.clone());
    }
    Ok(config)
}

fn run(args: &RunArgs, mode: Mode) -> Result<bool> {
    let config = load(args)?;
    if matches!(mode, Mode::Sweep) && config.sweep.is_empty() {
        bail!("sweep: {} has no [sweep] lists", args.config.display());
    }
    let experiment = config.resolve()?;
    let outcome = run_experiment(&experiment)?;
    let out_dir = config.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let traces = !matches!(mode, Mode::Verify);
    let written = write_artifacts(&outcome, Path::new(&out_dir), &config.emit, traces)?;
    if !args.common.quiet {
        for line in bound_lines(&outcome) {
            println!("{line}");
        }
        println!(
            "{} cell(s), {} artifact(s) in {}",
            outcome.cells.len(),
            written.len(),
            out_dir.display()
        );
    }
    Ok(outcome.all_pass())
}

fn run_selftest(common: &Common) -> bool {
    let checks = selftest::run_all();
    if !common.quiet {
        for c in &checks {
            println!("{c}");
        }
    }
    checks.iter().all(|c| c.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, Mode::Run),
        Command::Verify(args) => run(args, Mode::Verify),
        Command::Sweep(args) => run(args, Mode::Sweep),
        Command::Selftest(common) => Ok(run_selftest(common)),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rpe_core::harness::config::{split_overrides, Algorithm, ExperimentConfig};
use rpe_core::harness::run::{generate, run, Summary};
use rpe_core::Error;

/// Robust policy evaluation experiments.
///
/// Any config field can be overridden with `--key=value`, using dotted keys
/// for nested tables (`--frpe.iterations=500`).
#[derive(Parser)]
#[command(name = "rpe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Garnet instance to `<out>/model.toml`.
    Generate(Common),
    /// Robust Bellman fixed point.
    Oracle(Common),
    /// Deterministic dual averaging with an exact or noisy evaluator.
    Frpe(Common),
    /// Stochastic dual averaging with simulator rollouts.
    SfrpeSe(Common),
    /// Stochastic dual averaging with linear-feature SGD.
    SfrpeSlpe(Common),
    /// Oracle, FRPE and SFRPE+SE on one instance.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Oracle accuracy.
    #[arg(long)]
    tol: Option<f64>,
}

const RESERVED: &[&str] = &["config", "seed", "out", "tol", "help", "version"];

fn load(common: &Common, overrides: &[(String, String)], algorithm: Option<Algorithm>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(common.config.as_deref(), overrides)?;
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(tol) = common.tol {
        cfg.tol = tol;
    }
    Ok(cfg)
}

fn report(summary: &Summary) {
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.10}")).collect::<Vec<_>>().join(", ");
    println!("oracle V_r = [{}] ({} iterations)", fmt(&summary.oracle.v_r), summary.oracle.iterations);
    if let Some(f) = &summary.frpe {
        println!(
            "frpe: final gap {:e}, bound {:e} ({})",
            f.final_gap,
            f.gap_bound,
            if f.within_bound { "within bound" } else { "BOUND VIOLATED" }
        );
    }
    for (name, s) in [("sfrpe-se", &summary.sfrpe_se), ("sfrpe-slpe", &summary.sfrpe_slpe)] {
        if let Some(s) = s {
            println!(
                "{name}: mean = [{}], band [{:e}, {:e}], estimator check {}",
                fmt(&s.mean),
                s.band_lower,
                s.band_upper,
                if s.estimator_check { "passed" } else { "FAILED" }
            );
        }
    }
}

fn execute(command: Command, overrides: &[(String, String)]) -> Result<(), Error> {
    let (common, algorithm) = match &command {
        Command::Generate(c) => (c, None),
        Command::Oracle(c) => (c, Some(Algorithm::Oracle)),
        Command::Frpe(c) => (c, Some(Algorithm::Frpe)),
        Command::SfrpeSe(c) => (c, Some(Algorithm::SfrpeSe)),
        Command::SfrpeSlpe(c) => (c, Some(Algorithm::SfrpeSlpe)),
        Command::Compare(c) => (c, Some(Algorithm::Compare)),
    };
    let cfg = load(common, overrides, algorithm)?;
    if algorithm.is_none() {
        let path = generate(&cfg)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let summary = run(&cfg)?;
    report(&summary);
    println!("results in {}", cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args(), RESERVED);
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anil_lab::experiment::{error_exit_code, parse_config, replay, run_experiment, ExperimentKind};
use clap::{Args, Parser, Subcommand};

/// Meta-gradient checks, probes, and convergence sweeps for ANIL on
/// synthetic task families.
#[derive(Parser)]
#[command(name = "anil-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic meta-gradients vs finite differences.
    Gradcheck(RunArgs),
    /// Inner-loop contraction bound on random point pairs.
    Contraction(RunArgs),
    /// Block smoothness estimates as N grows.
    Smoothness(RunArgs),
    /// Outer training across N, iterations and cost to epsilon.
    Sweep(RunArgs),
    /// ANIL against MAML on one configuration.
    CompareMaml(RunArgs),
    /// Rerun a recorded experiment and compare outputs byte for byte.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sets every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> ExitCode {
    let mut cfg = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    if cfg.experiment != kind {
        return fail(
            2,
            format!(
                "config describes a `{}` experiment, not `{}`",
                cfg.experiment.name(),
                kind.name()
            ),
        );
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.override_seed(seed);
    }
    match run_experiment(&cfg) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("wrote {}", cfg.output_dir.display());
            ExitCode::from(outcome.status.code() as u8)
        }
        Err(e) => fail(error_exit_code(&e), e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Gradcheck(a) => run(ExperimentKind::GradCheck, a),
        Command::Contraction(a) => run(ExperimentKind::Contraction, a),
        Command::Smoothness(a) => run(ExperimentKind::SmoothnessScaling, a),
        Command::Sweep(a) => run(ExperimentKind::ConvergenceSweep, a),
        Command::CompareMaml(a) => run(ExperimentKind::ComplexityCompare, a),
        Command::Replay { manifest, out } => match replay(manifest, out) {
            Ok(report) if report.identical() => {
                println!("replay identical: {} files", report.outcome.extra_files.len() + 2);
                ExitCode::SUCCESS
            }
            Ok(report) => {
                if !report.pool_hash_matches {
                    eprintln!("evaluation pool hash differs");
                }
                for f in &report.mismatched {
                    eprintln!("differs: {f}");
                }
                ExitCode::from(1)
            }
            Err(e) => fail(error_exit_code(&e), e),
        },
    }
}

//! Command-line entry point.
//!
//! Subcommands: `train-expert`, `record-expert`, `run`, `compare`. Exit code
//! is zero on success; failures print one machine-readable line to stderr:
//! `saceo-error: <kind>: <message>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saceo::harness::{
    cmd_record_expert, cmd_run, cmd_train_expert, compare_runs, format_report,
    parse_expert_record, write_report, CliOverrides, RunConfig,
};
use saceo::Error;

#[derive(Parser)]
#[command(name = "saceo", about = "Maximum-entropy actor-critic with expert observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CommonFlags {
    /// Flat `key = value` config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Algorithm: sac | sac-eo | bco | sac-eo-fixed.
    #[arg(long)]
    algo: Option<String>,
    /// Environment: pendulum-swingup | pointmass-reach.
    #[arg(long)]
    env: Option<String>,
    /// Discrepancy scale for the adaptive mixing coefficient.
    #[arg(long)]
    beta: Option<f64>,
    /// Fixed mixing coefficient (sac-eo-fixed).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Expert observation file.
    #[arg(long)]
    expert: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a plain maximum-entropy agent to serve as the expert.
    TrainExpert(CommonFlags),
    /// Roll out a trained checkpoint and record its states.
    RecordExpert {
        /// Checkpoint produced by train-expert (or any run).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of trajectories to record.
        #[arg(long)]
        trajectories: Option<usize>,
        /// Optional cap on total recorded states.
        #[arg(long)]
        states: Option<usize>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Run one training job with the configured algorithm.
    Run(CommonFlags),
    /// Aggregate finished runs into a comparison report and plots.
    Compare {
        /// Run directories (each with metrics.csv and config.resolved).
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Expert performance record from train-expert.
        #[arg(long)]
        expert_record: PathBuf,
        /// Output directory for report.txt, curves.csv, learning_curves.svg.
        #[arg(long)]
        out: PathBuf,
        /// Expert-fraction thresholds for the steps-to table.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.75, 0.95])]
        thresholds: Vec<f64>,
    },
}

fn resolve_config(flags: &CommonFlags) -> saceo::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &flags.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_cli(&CliOverrides {
        algo: flags.algo.clone(),
        env: flags.env.clone(),
        seed: flags.seed,
        beta: flags.beta,
        epsilon: flags.epsilon,
        expert: flags.expert.clone(),
        out: flags.out.clone(),
        steps: flags.steps,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> saceo::Result<()> {
    match cli.command {
        Command::TrainExpert(flags) => {
            let cfg = resolve_config(&flags)?;
            let outcome = cmd_train_expert(&cfg)?;
            println!(
                "expert trained: checkpoint {}, mean return {:.3} (record {})",
                outcome.checkpoint.display(),
                outcome.evaluation.mean_return,
                outcome.record_path.display()
            );
        }
        Command::RecordExpert {
            checkpoint,
            trajectories,
            states,
            common,
        } => {
            let cfg = resolve_config(&common)?;
            let out = common.out.clone().ok_or_else(|| {
                Error::Config("record-expert requires --out <expert file path>".into())
            })?;
            let outcome = cmd_record_expert(
                &checkpoint,
                &cfg.env,
                cfg.horizon,
                trajectories.unwrap_or(cfg.record_trajectories),
                states.or(cfg.record_states),
                &out,
                cfg.seed,
            )?;
            println!(
                "recorded {} trajectories ({} states) to {}",
                outcome.trajectories,
                outcome.states,
                outcome.path.display()
            );
        }
        Command::Run(flags) => {
            let cfg = resolve_config(&flags)?;
            let outcome = cmd_run(&cfg)?;
            println!(
                "run complete: metrics {}, checkpoint {}",
                outcome.metrics_path.display(),
                outcome.final_checkpoint.display()
            );
        }
        Command::Compare {
            runs,
            expert_record,
            out,
            thresholds,
        } => {
            let expert_return = parse_expert_record(&expert_record)?;
            let report = compare_runs(&runs, expert_return, &thresholds)?;
            write_report(&report, &out)?;
            print!("{}", format_report(&report));
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Usage(_) => "usage",
        Error::Numerical { .. } => "numerical",
        Error::Parse { .. } => "parse",
        Error::Io { .. } => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("saceo-error: {}: {e}", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}

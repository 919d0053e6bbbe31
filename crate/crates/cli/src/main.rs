//! `marginlab` — train multi-class classifiers with margin-score selective
//! sampling, sweep the margin-regularization trade-off, and audit the
//! geometry with independent oracles.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical abort,
//! 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marginlab_cli::commands::{self, ScoreData};
use marginlab_cli::config::RunConfig;
use marginlab_core::error::Error;
use marginlab_core::selection::PolicyKind;

#[derive(Parser)]
#[command(name = "marginlab", version, about)]
struct Cli {
    /// Override the training seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for multi-run commands.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Path to the run configuration JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job and write metrics, summary, and checkpoint.
    Train(ConfigArg),
    /// Run a policies x seeds grid and tabulate steps-to-target per run.
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated policies (mms, random, hard_negative, entropy).
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<PolicyKind>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
    /// Grid-search the regularization trade-off factor.
    SweepAlpha {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated alpha grid.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        /// Comma-separated seeds (defaults to the config seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Score a dataset with a checkpointed model: margin scores per sample.
    Score {
        /// Model checkpoint JSON.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV to score.
        #[arg(long, conflicts_with = "config")]
        csv: Option<PathBuf>,
        /// Label column of the CSV; omit to score unlabeled data.
        #[arg(long, requires = "csv")]
        label_column: Option<String>,
        /// Score the dataset described by a run config instead of a CSV.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference audit of the composite objective's gradients.
    Gradcheck {
        /// Number of random models to check.
        #[arg(long, default_value_t = 20)]
        models: usize,
        /// Central-difference perturbation.
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
    },
    /// Margin-score equivalence and boundary-crossing sweep.
    OracleSweep {
        /// Number of random (head, point) draws.
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
    /// Generate a synthetic blob dataset as CSV.
    GenData {
        #[arg(long, default_value_t = 3)]
        n_classes: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 4.0)]
        center_radius: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli, path: &PathBuf) -> Result<RunConfig, Error> {
    let mut config = RunConfig::from_file(path)?;
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.out_dir = out_dir.display().to_string();
    }
    Ok(config)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArg(_)
        | Error::Json { .. }
        | Error::Csv { .. }
        | Error::DimMismatch(_)
        | Error::EmptyInput(_) => 2,
        Error::NonFinite { .. } => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Train(cfg) => {
            let config = load_config(cli, &cfg.config)?;
            let outcome = commands::cmd_train(&config)?;
            println!(
                "train: {} steps-to-target, final validation error {:.6}, {:.2}s, artifacts in {}",
                marginlab_cli::artifacts::steps_cell(outcome.steps_to_target),
                outcome.final_error,
                outcome.wallclock_seconds,
                outcome.out_dir.display()
            );
            Ok(if outcome.aborted { 3 } else { 0 })
        }
        Command::Compare { config, policies, seeds } => {
            let base = load_config(cli, &config.config)?;
            let outcome = commands::cmd_compare(&base, policies, seeds, cli.threads)?;
            println!(
                "compare: {} runs, table in {}",
                outcome.rows.len(),
                outcome.csv_path.display()
            );
            Ok(0)
        }
        Command::SweepAlpha { config, alphas, seeds } => {
            let base = load_config(cli, &config.config)?;
            let seeds =
                if seeds.is_empty() { vec![base.train.seed] } else { seeds.clone() };
            let outcome = commands::cmd_sweep_alpha(&base, alphas, &seeds, cli.threads)?;
            for row in &outcome.rows {
                println!(
                    "alpha {:>12e}: mean validation error {:.6} over {} runs",
                    row.alpha, row.mean_validation_error, row.runs
                );
            }
            println!("sweep table in {}", outcome.csv_path.display());
            Ok(0)
        }
        Command::Score { checkpoint, csv, label_column, config } => {
            let data = match (csv, config) {
                (Some(path), None) => ScoreData::Csv {
                    path: path.clone(),
                    label_column: label_column.clone(),
                },
                (None, Some(path)) => {
                    ScoreData::Config(Box::new(load_config(cli, path)?))
                }
                _ => {
                    return Err(Error::invalid(
                        "score needs exactly one of --csv or --config".to_string(),
                    ))
                }
            };
            let out_dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("score-out"));
            let (summary, csv_path) = commands::cmd_score(checkpoint, &data, &out_dir)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
            println!("scores in {}", csv_path.display());
            Ok(0)
        }
        Command::Gradcheck { models, epsilon } => {
            let outcome =
                commands::cmd_gradcheck(*models, *epsilon, cli.seed.unwrap_or(1))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome).expect("outcome serializes")
            );
            Ok(if outcome.pass { 0 } else { 1 })
        }
        Command::OracleSweep { draws } => {
            let outcome = commands::cmd_oracle_sweep(*draws, cli.seed.unwrap_or(1))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome).expect("outcome serializes")
            );
            Ok(if outcome.pass { 0 } else { 1 })
        }
        Command::GenData { n_classes, dim, per_class, center_radius, sigma, out } => {
            commands::cmd_gen_data(
                *n_classes,
                *dim,
                *per_class,
                *center_radius,
                *sigma,
                cli.seed.unwrap_or(1),
                out,
            )?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

//! `fedmanip`: run experiments, sweeps and the invariant suites.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedmanip::harness::{self, ExperimentConfig};

/// Overrides the `--out` directory of `run` and `sweep` when set.
const OUT_ENV: &str = "FEDMANIP_OUT";

#[derive(Parser)]
#[command(
    name = "fedmanip",
    version,
    about = "Federated LoRA fine-tuning under model manipulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and summary.json.
    Run {
        /// TOML config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Dotted override such as `augmp.visibility=0.6`; repeatable, last wins.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run one experiment per value of a sweepable field.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// One of: rank, alpha, adversaries, visibility, attack.
        #[arg(long)]
        axis: String,
        /// Comma separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run numerical invariant checks.
    Verify {
        /// numerics, gradients, gst, duals, determinism or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn out_dir(flag: PathBuf) -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or(flag)
}

fn main() -> ExitCode {
    match try_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn try_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, out, set } => {
            let cfg = ExperimentConfig::load_with_overrides(config.as_deref(), &set)?;
            let out = out_dir(out);
            let outcome = harness::run_experiment(&cfg).context("experiment failed")?;
            let s = harness::write_outputs(&outcome, &out)?;
            println!(
                "{} rounds, final accuracy {:.4}, local {:.4}, wrote {}",
                s.rounds,
                s.final_accuracy,
                s.final_local_accuracy,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            config,
            axis,
            values,
            out,
            set,
        } => {
            let cfg = ExperimentConfig::load_with_overrides(config.as_deref(), &set)?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
            let out = out_dir(out);
            let index = harness::run_sweep(&cfg, &axis, &values, &out)?;
            for e in &index.runs {
                println!(
                    "{}={:<10} final accuracy {:.4}  {}",
                    index.axis, e.value, e.final_accuracy, e.dir
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite } => {
            let report = harness::verify(&suite)?;
            print!("{}", report.table());
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

//! `fedmp`: batch driver for the federated-learning simulator.
//!
//! Exit status is 0 on success, 1 on an error and 2 when a run finished but
//! one of its invariant checks failed.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ExperimentConfig, Mode, Overrides};
use crate::error::{CliError, Result};

#[derive(Parser)]
#[command(
    name = "fedmp",
    version,
    about = "Federated learning with manifold completion and prototype alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic client shards and test sets.
    Generate(Common),
    /// Train the configured mode over every seed.
    Run(Common),
    /// Train all four module combinations over every seed.
    Ablate(Common),
    /// Attack the models saved by a previous `run`.
    Attack(Common),
    /// Merge run and ablation summaries into one table.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML file; `FEDMP__section__key` variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this seed only.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        ExperimentConfig::load(
            path,
            &Overrides {
                seed: self.seed,
                mode: self.mode,
                out: self.out.clone(),
            },
        )
    }
}

fn dispatch(command: &Command) -> Result<commands::Violations> {
    match command {
        Command::Generate(c) => commands::generate(&c.load()?).map(|_| Vec::new()),
        Command::Run(c) => commands::run(&c.load()?),
        Command::Ablate(c) => commands::ablate(&c.load()?),
        Command::Attack(c) => commands::attack(&c.load()?),
        Command::Report(c) => {
            let out = match (&c.out, &c.config) {
                (Some(out), _) => out.clone(),
                (None, Some(_)) => c.load()?.out,
                (None, None) => {
                    return Err(CliError::Config("report needs --out or --config".into()))
                }
            };
            commands::report(&out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(v) if v.is_empty() => ExitCode::SUCCESS,
        Ok(v) => {
            for m in &v {
                eprintln!("invariant violated: {m}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use svb_cli::run::resolve_out;
use svb_cli::{compare_runs, run_experiment, ExitKind, ExperimentConfig, RunOptions};

/// Semantic variational Bayes experiments.
#[derive(Parser)]
#[command(name = "svb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its outputs.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's "out" field).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render SVG plots of traces and curves.
        #[arg(long)]
        plots: bool,
        /// Worker threads for independent sweep cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare two run directories.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
    /// Check a config without computing anything.
    Validate { config: PathBuf },
}

fn read_config(path: &PathBuf) -> Result<(ExperimentConfig, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display())).context(ExitKind::Io)?;
    let text = String::from_utf8(bytes.clone()).context("config is not UTF-8").context(ExitKind::Config)?;
    Ok((ExperimentConfig::parse(&text)?, bytes))
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, plots, jobs } => {
            let (cfg, bytes) = read_config(&config)?;
            let out = resolve_out(out.as_deref(), &cfg)?;
            let outcome = run_experiment(&cfg, &bytes, &RunOptions { out, jobs, plots })?;
            println!(
                "{}: wrote {} files to {}",
                outcome.manifest.name,
                outcome.manifest.files.len() + 1,
                outcome.dir.display()
            );
            if !outcome.converged() {
                return Err(anyhow::anyhow!("{} did not converge", outcome.manifest.name))
                    .context(ExitKind::NotConverged);
            }
        }
        Command::Compare { dir_a, dir_b } => print!("{}", compare_runs(&dir_a, &dir_b)?),
        Command::Validate { config } => {
            let (cfg, _) = read_config(&config)?;
            println!("{}: valid {} config", cfg.name(), cfg.experiment.kind());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(ExitKind::code_of(&err) as u8)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use chrono::NaiveDate;
use clap::{Parser, Subcommand};

use reorder_core::pipeline::{run_stages, PipelineConfig, Stage};
use reorder_core::position::Bucketing;

/// Transaction re-ordering cost pipeline.
#[derive(Debug, Parser)]
#[command(name = "reorder", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML). Without it the built-in defaults apply.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// First UTC date to analyse (for `synth`, the first generated date).
    #[arg(long, global = true, value_name = "DATE")]
    from: Option<NaiveDate>,

    /// Last UTC date to analyse (for `synth`, the last generated date).
    #[arg(long, global = true, value_name = "DATE")]
    to: Option<NaiveDate>,

    /// Dates to leave out, comma separated.
    #[arg(long, global = true, value_name = "DATE[,DATE...]", value_delimiter = ',')]
    exclude: Vec<NaiveDate>,

    /// Add the front-run and back-run indicators to the model.
    #[arg(long, global = true)]
    extended: bool,

    /// Cut block positions into deciles instead of quartiles.
    #[arg(long, global = true)]
    deciles: bool,

    /// Seed for every random draw (bootstrap and synthetic data).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load every input and report row accounting and structural checks.
    IngestCheck,
    /// Fit the daily ordered-probit models.
    Fit,
    /// Average and quantile marginal effects with gas and USD equivalents.
    Effects,
    /// Daily reordering insurance costs.
    Insurance,
    /// Sandwich joins, tests, effect regressions and skewness.
    Sandwich,
    /// Builder shares, Herfindahl indices and validator revenue.
    Concentration,
    /// Write a synthetic input bundle and a config that analyses it.
    Synth,
    /// Every analysis stage.
    Report,
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::IngestCheck => Stage::IngestCheck,
            Command::Fit => Stage::Fit,
            Command::Effects => Stage::Effects,
            Command::Insurance => Stage::Insurance,
            Command::Sandwich => Stage::Sandwich,
            Command::Concentration => Stage::Concentration,
            Command::Synth => Stage::Synth,
            Command::Report => Stage::Report,
        }
    }
}

fn build_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    let synth = matches!(cli.command, Command::Synth);
    if synth {
        if let Some(from) = cli.from {
            cfg.synth.start_date = from;
        }
        if let Some(to) = cli.to {
            let days = (to - cfg.synth.start_date).num_days() + 1;
            anyhow::ensure!(days >= 1, "--to {to} is before the first generated date");
            cfg.synth.days = days as u32;
        }
    } else {
        cfg.window.from = cli.from.or(cfg.window.from);
        cfg.window.to = cli.to.or(cfg.window.to);
    }
    cfg.window.exclude.extend(cli.exclude.iter().copied());
    if cli.extended {
        cfg.model.extended = true;
    }
    if cli.deciles {
        cfg.model.buckets = Bucketing::Deciles;
        cfg.synth.bucketing = Bucketing::Deciles;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(o) = &cli.out {
        // Taken against the working directory, not the config file.
        cfg.output_dir = std::path::absolute(o).with_context(|| format!("resolving {}", o.display()))?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let stage = cli.command.stage();
    match run_stages(&cfg, &[stage]) {
        Ok(summary) => {
            println!(
                "{stage}: {} files in {} (config {})",
                summary.files.len(),
                summary.out_dir.display(),
                &summary.config_hash[..12]
            );
            if summary.is_complete() {
                ExitCode::SUCCESS
            } else {
                for f in &summary.failures {
                    eprintln!("incomplete: {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {stage}: {e}");
            ExitCode::from(2)
        }
    }
}

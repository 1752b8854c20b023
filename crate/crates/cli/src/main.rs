use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prefalign_core::pipeline::{self, RunConfig, OUT_ENV};
use prefalign_core::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "prefalign",
    version,
    about = "Synthetic reward-model training and preference alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting profile, applied before the file.
    #[arg(long, default_value = "desk")]
    profile: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its labels.
    GenWorld(Common),
    /// Train the single-dimension rater.
    TrainScdr {
        #[command(flatten)]
        common: Common,
        /// Continue from the saved checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Train the pairwise hierarchical rater.
    TrainHcr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
        /// Start from the format prior instead of the single-dimension checkpoint.
        #[arg(long)]
        from_scratch: bool,
    },
    /// Align the generator against the configured scorer.
    Align(Common),
    /// Recompute held-out metrics from saved artifacts.
    Eval(Common),
    /// Every enabled stage followed by evaluation.
    Run(Common),
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::profile(&c.profile)?;
    if let Some(path) = &c.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        cfg.apply_text(&text)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.out = out.clone();
    }
    for kv in &c.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::Input(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorld(c) => emit(&pipeline::cmd_gen_world(&resolve(&c)?)?),
        Command::TrainScdr { common, resume } => {
            emit(&pipeline::cmd_train_scdr(&resolve(&common)?, resume)?)
        }
        Command::TrainHcr {
            common,
            resume,
            from_scratch,
        } => {
            let mut cfg = resolve(&common)?;
            cfg.hcr_from_scratch |= from_scratch;
            emit(&pipeline::cmd_train_hcr(&cfg, resume)?)
        }
        Command::Align(c) => emit(&pipeline::cmd_align(&resolve(&c)?)?),
        Command::Eval(c) => emit(&pipeline::cmd_eval(&resolve(&c)?)?),
        Command::Run(c) => emit(&pipeline::cmd_run_all(&resolve(&c)?)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

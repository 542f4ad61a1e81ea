//! `usdrl`: synthetic data, pretraining, evaluation and export from one binary.

mod commands;
mod config;
mod eval;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "usdrl", version, about = "Dense skeleton representation learning: pretrain, evaluate, export")]
struct Cli {
    /// TOML configuration; any key below may also be given as --<key> <value>.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Sets train.seed, finetune.seed and synth.seed (explicit keys win).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for reports and artifacts.
    #[arg(long, global = true, default_value = "usdrl-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug, Serialize)]
enum Cmd {
    /// Write a synthetic dataset (manifest and JSONL splits) into --out-dir.
    Synth(SynthArgs),
    /// Pretrain an encoder and write a checkpoint, loss log and report.
    Pretrain(PretrainArgs),
    /// Evaluate a checkpoint on a downstream task.
    Eval {
        #[command(subcommand)]
        task: eval::Task,
    },
    /// Instance embeddings of one split as CSV: id, label, values.
    ExportEmbeddings(ExportArgs),
    /// Compare analytic and finite-difference gradients of the loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    joints: Option<usize>,
    #[arg(long)]
    untrimmed_videos: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct PretrainArgs {
    /// Dataset manifest (overrides data.manifest).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue from this checkpoint up to train.epochs.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output CSV; defaults to <out-dir>/embeddings.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    /// `tiny` uses the small gradient-check profile; `config` the resolved configuration.
    #[arg(long, default_value = "tiny", value_parser = ["tiny", "config"])]
    profile: String,
    /// Samples in the checked batch.
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 2e-3)]
    tolerance: f64,
    /// Entries of magnitude below this are not compared.
    #[arg(long, default_value_t = 1e-6)]
    floor: f64,
    /// Entries checked per parameter array; all when omitted.
    #[arg(long)]
    per_array: Option<usize>,
}

/// State shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub digest: String,
    pub started: Instant,
}

fn command() -> clap::Command {
    let keys = config::keys_help();
    let mut cmd = Cli::command().after_long_help(keys.clone());
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    for n in names {
        let k = keys.clone();
        cmd = cmd.mut_subcommand(n, move |s| s.after_long_help(k));
    }
    cmd
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("USDRL_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).with_context(|| format!("USDRL_THREADS must be a positive integer, got {v:?}"))?;
        usdrl::parallel::set_threads(n).map_err(anyhow::Error::msg)?;
    }
    Ok(())
}

fn run() -> Result<()> {
    let started = Instant::now();
    let (args, overrides) = config::split_overrides(std::env::args().collect())?;
    let cli = Cli::from_arg_matches(&command().get_matches_from(args))?;
    init_threads()?;

    let mut all = Vec::new();
    if let Some(s) = cli.seed {
        for k in ["train.seed", "finetune.seed", "synth.seed"] {
            all.push((k.to_string(), s.to_string()));
        }
    }
    all.extend(overrides);
    let cfg = config::resolve(cli.config.as_deref(), &all)?;
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating output directory {}", cli.out_dir.display()))?;
    let digest = cfg.digest(&serde_json::to_value(&cli.cmd)?);
    let ctx = Ctx { cfg, out_dir: cli.out_dir, digest, started };

    let report = match &cli.cmd {
        Cmd::Synth(a) => commands::synth(&ctx, a)?,
        Cmd::Pretrain(a) => commands::pretrain(&ctx, a)?,
        Cmd::Eval { task } => eval::run(&ctx, task)?,
        Cmd::ExportEmbeddings(a) => commands::export(&ctx, a)?,
        Cmd::Gradcheck(a) => commands::gradcheck(&ctx, a)?,
    };
    println!("{}", report.display());
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `dermseg`: synthesize data, train, infer, evaluate, benchmark, check
//! gradients and dump feature maps.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage error.

mod cmd;
mod common;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::common::UsageError;

#[derive(Parser, Debug)]
#[command(name = "dermseg", version, about = "Adversarial skin-lesion segmentation")]
struct Cli {
    /// Worker threads; the engine is single-threaded, so only 1 is accepted.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic image/mask dataset with a manifest.
    Synth(cmd::synth::SynthArgs),
    /// Train a generator against the patch discriminator.
    Train(cmd::train::TrainArgs),
    /// Predict masks for one image or a directory of images.
    Infer(cmd::infer::InferArgs),
    /// Score predicted masks against ground truth.
    Eval(cmd::eval::EvalArgs),
    /// Parameter counts and forward latency, with baseline tracking.
    Bench(cmd::bench::BenchArgs),
    /// Finite-difference verification of every registered op and loss.
    Gradcheck(cmd::gradcheck::GradcheckArgs),
    /// Write one grayscale grid per intermediate activation.
    DumpFeatures(cmd::features::DumpArgs),
}

/// Model selection shared by commands that build a network.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Shipped preset (egan-toy, mgan-toy, egan-full, mgan-full).
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// Run configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override `section.key=value`; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    if cli.threads != 1 {
        return Err(UsageError(format!("--threads {} unsupported: the engine runs on one thread", cli.threads)).into());
    }
    match cli.command {
        Command::Synth(a) => cmd::synth::run(a, cli.threads),
        Command::Train(a) => cmd::train::run(a, cli.threads),
        Command::Infer(a) => cmd::infer::run(a, cli.threads),
        Command::Eval(a) => cmd::eval::run(a),
        Command::Bench(a) => cmd::bench::run(a, cli.threads),
        Command::Gradcheck(a) => cmd::gradcheck::run(a),
        Command::DumpFeatures(a) => cmd::features::run(a, cli.threads),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

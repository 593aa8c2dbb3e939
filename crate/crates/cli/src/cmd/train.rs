use std::path::PathBuf;

use clap::Args;
use dermseg::train::{prepare_data, train_loop, LoopOptions, BEST_FILE};

use crate::common::{resolve_config, Invocation};
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the generator's adversarial term.
    #[arg(long)]
    lambda_adv: Option<f64>,
    /// Weight of the smoothing term in the combined loss.
    #[arg(long)]
    smooth_weight: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Dataset directory; synthetic data is generated when absent.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Output directory (default `runs/<config name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the last checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many steps, leaving a resumable checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
}

pub fn run(a: TrainArgs, threads: usize) -> anyhow::Result<bool> {
    let mut model = a.model.clone();
    if let Some(s) = a.seed {
        model.overrides.push(format!("train.seed={s}"));
    }
    if let Some(l) = a.lambda_adv {
        model.overrides.push(format!("train.lambda_adv={l:?}"));
    }
    if let Some(w) = a.smooth_weight {
        model.overrides.push(format!("train.smoothing_weight={w:?}"));
    }
    if let Some(m) = a.max_steps {
        model.overrides.push(format!("train.max_steps={m}"));
    }
    if let Some(d) = &a.data_root {
        model.overrides.push(format!("data.root={:?}", d.display().to_string()));
    }
    let (cfg, path) = resolve_config(&model, None)?;
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    Invocation::new("train", path.as_deref(), &model.overrides, Some(cfg.train.seed), &out, threads).write(&out)?;

    let (train, val, report) = prepare_data(&cfg.data, cfg.generator.input_size)?;
    for r in &report.rejected {
        log::warn!("skipped {}: {}", r.id, r.reason);
    }
    log::info!("{}: {} train / {} val samples", cfg.name, train.len(), val.len());
    let opts = LoopOptions {
        resume: a.resume,
        stop_after: a.stop_after,
    };
    let s = train_loop(&cfg, &train, &val, &out, &opts)?;
    println!(
        "{}: {} steps, best val dice {:.4} at step {}, checkpoint {}",
        cfg.name,
        s.steps,
        s.best_dice,
        s.best_step,
        out.join(BEST_FILE).display()
    );
    Ok(true)
}

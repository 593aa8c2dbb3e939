use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dermseg::data::{load_image, save_mask, save_probability};
use dermseg::models::ModelGraph;
use dermseg::nn::ResampleMode;
use dermseg::{Tape, Tensor};

use crate::common::{image_files, load_model, resolve_config, stem, Invocation};
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Generator weights (`best.lgc`); its directory's config is used when no model flag is given.
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "predictions")]
    out: PathBuf,
    /// Also write probability maps under `<out>/prob/`.
    #[arg(long)]
    prob: bool,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

fn resize(x: &Tensor, hw: (usize, usize)) -> anyhow::Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let y = tape.resample(v, ResampleMode::Bilinear, hw)?;
    Ok(tape.value(y).clone())
}

/// Probability map `[H, W]` at the image's own resolution.
pub fn predict_image(model: &ModelGraph, input: [usize; 2], path: &Path) -> anyhow::Result<Tensor> {
    let img = load_image(path)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let x = img.reshape(vec![1, 3, h, w])?;
    let x = if (h, w) == (input[0], input[1]) { x } else { resize(&x, (input[0], input[1]))? };
    let p = model.predict(&x)?;
    let p = if (h, w) == (input[0], input[1]) { p } else { resize(&p, (h, w))? };
    Ok(p.reshape(vec![h, w])?)
}

pub fn run(a: InferArgs, threads: usize) -> anyhow::Result<bool> {
    let (cfg, path) = resolve_config(&a.model, Some(&a.checkpoint))?;
    let model = load_model(&cfg, Some(&a.checkpoint))?;
    let files = if a.input.is_dir() { image_files(&a.input)? } else { vec![a.input.clone()] };
    fs::create_dir_all(&a.out)?;
    if a.prob {
        fs::create_dir_all(a.out.join("prob"))?;
    }
    Invocation::new("infer", path.as_deref(), &a.model.overrides, None, &a.out, threads).write(&a.out)?;
    for f in &files {
        let p = predict_image(&model, cfg.generator.input_size, f)?;
        let mask = p.map(|v| (v >= a.threshold) as u8 as f64);
        save_mask(&a.out.join(format!("{}.png", stem(f))), &mask)?;
        if a.prob {
            save_probability(&a.out.join("prob").join(format!("{}.png", stem(f))), &p)?;
        }
    }
    println!("wrote {} masks to {}", files.len(), a.out.display());
    Ok(true)
}

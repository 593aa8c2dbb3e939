use std::path::PathBuf;

use clap::Args;
use dermseg::data::load_image;
use dermseg::features::dump_features;

use crate::common::{load_model, resolve_config, Invocation};
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct DumpArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Generator weights; a freshly initialized model is used when absent.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "features")]
    out: PathBuf,
    /// Tap to dump (repeatable; default all).
    #[arg(long = "tap")]
    taps: Vec<String>,
}

pub fn run(a: DumpArgs, threads: usize) -> anyhow::Result<bool> {
    let (cfg, path) = resolve_config(&a.model, a.checkpoint.as_deref())?;
    let model = load_model(&cfg, a.checkpoint.as_deref())?;
    let img = load_image(&a.image)?;
    let [h, w] = cfg.generator.input_size;
    if img.shape()[1..] != [h, w] {
        anyhow::bail!("image is {}x{}, model expects {h}x{w}", img.shape()[1], img.shape()[2]);
    }
    let paths = dump_features(&model, &img, &a.taps, &a.out)?;
    Invocation::new("dump-features", path.as_deref(), &a.model.overrides, None, &a.out, threads).write(&a.out)?;
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(true)
}

use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use dermseg::data::{save_dataset, synth_generate, SynthSpec};

use crate::common::{usage, Invocation};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML file with a full synthesis spec; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    size: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "data/synth")]
    out: PathBuf,
}

pub fn run(a: SynthArgs, threads: usize) -> anyhow::Result<bool> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(c) = a.count {
        spec.count = c as usize;
    }
    if let Some(s) = a.size {
        spec.size = s as usize;
    }
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let ds = synth_generate(&spec)?;
    save_dataset(&a.out, &ds)?;
    fs::write(a.out.join("synth.toml"), toml::to_string(&spec)?)?;
    Invocation::new("synth", a.spec.as_deref(), &[], Some(spec.seed), &a.out, threads).write(&a.out)?;
    println!("wrote {} samples ({}x{}) to {}", ds.len(), spec.size, spec.size, a.out.display());
    Ok(true)
}

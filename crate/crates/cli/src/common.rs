//! Config resolution, model loading and the per-run invocation record.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dermseg::models::ModelGraph;
use dermseg::train::{load_generator, RunConfig, CONFIG_FILE};
use serde::Serialize;

use crate::ModelArgs;

/// Bad flags or flag combinations; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// What was asked for, written as `invocation.toml` next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct Invocation {
    pub command: String,
    pub config: Option<String>,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub output: String,
    pub threads: usize,
}

impl Invocation {
    pub fn new(command: &str, config: Option<&Path>, overrides: &[String], seed: Option<u64>, output: &Path, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            overrides: overrides.to_vec(),
            seed,
            output: output.display().to_string(),
            threads,
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("invocation.toml"), toml::to_string(self)?)?;
        Ok(())
    }
}

/// Resolve `--preset`/`--config`, falling back to the config snapshot next
/// to `checkpoint`, then apply `--set` overrides.
pub fn resolve_config(args: &ModelArgs, checkpoint: Option<&Path>) -> anyhow::Result<(RunConfig, Option<PathBuf>)> {
    let (base, path) = match (&args.preset, &args.config) {
        (Some(p), _) => (
            RunConfig::preset(p).map_err(|_| {
                usage(format!(
                    "unknown preset {p:?}; available: {}",
                    dermseg::train::preset_names().join(", ")
                ))
            })?,
            None,
        ),
        (None, Some(c)) => (
            RunConfig::load(c).with_context(|| format!("loading {}", c.display()))?,
            Some(c.clone()),
        ),
        (None, None) => {
            let sidecar = checkpoint.and_then(Path::parent).map(|d| d.join(CONFIG_FILE));
            match sidecar {
                Some(s) if s.exists() => (RunConfig::load(&s)?, Some(s)),
                _ => return Err(usage("no model given: pass --preset or --config")),
            }
        }
    };
    let cfg = base.with_overrides(&args.overrides).map_err(|e| usage(e.to_string()))?;
    Ok((cfg, path))
}

/// Generator for `cfg`, with weights from `checkpoint` when given.
pub fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<ModelGraph> {
    let mut g = ModelGraph::generator(&cfg.generator, cfg.train.seed)?;
    if let Some(ck) = checkpoint {
        load_generator(ck, &mut g).with_context(|| format!("loading {}", ck.display()))?;
    }
    Ok(g)
}

/// Image files in `dir` (png/jpg/jpeg), sorted by name.
pub fn image_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

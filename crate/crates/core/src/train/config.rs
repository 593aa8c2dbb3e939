//! Run configuration: TOML files, shipped presets and `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Layout, SynthSpec};
use crate::error::{Error, Result};
use crate::losses::AdversarialForm;
use crate::models::{DiscriminatorConfig, GeneratorConfig};
use crate::train::OptimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    /// Parameters, moments and running statistics are rounded to `f32`
    /// after every update, so checkpoints capture the state exactly.
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub lambda_adv: f64,
    pub smoothing_weight: f64,
    pub adversarial_form: AdversarialForm,
    pub seed: u64,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub precision: Precision,
    pub threshold: f64,
    pub augment: bool,
    pub generator_optim: OptimConfig,
    pub discriminator_optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_steps: 1000,
            g_steps: 1,
            d_steps: 1,
            lambda_adv: 1.0,
            smoothing_weight: 1.0,
            adversarial_form: AdversarialForm::NonSaturating,
            seed: 42,
            eval_every: 100,
            checkpoint_every: 100,
            precision: Precision::F32,
            threshold: 0.5,
            augment: true,
            generator_optim: OptimConfig::adam(1e-3),
            discriminator_optim: OptimConfig::sgd(1e-4),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.g_steps == 0 || self.d_steps == 0 {
            return bad("g_steps and d_steps must be positive");
        }
        if self.lambda_adv < 0.0 || self.smoothing_weight < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if self.eval_every == 0 || self.checkpoint_every == 0 {
            return bad("eval_every and checkpoint_every must be positive");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }

    /// Pure supervised dice training.
    pub fn is_dice_only(&self) -> bool {
        self.lambda_adv == 0.0 && self.smoothing_weight == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Load from disk instead of generating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
    #[serde(default = "default_layout")]
    pub layout: Layout,
    /// Resize loaded samples to this square size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resize: Option<usize>,
    pub val_fraction: f64,
    pub split_seed: u64,
    pub synth: SynthSpec,
}

fn default_layout() -> Layout {
    Layout::Flat
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            layout: Layout::Flat,
            resize: None,
            val_fraction: 0.2,
            split_seed: 42,
            synth: SynthSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

const PRESETS: [(&str, &str); 4] = [
    ("egan-toy", include_str!("../../configs/egan-toy.toml")),
    ("mgan-toy", include_str!("../../configs/mgan-toy.toml")),
    ("egan-full", include_str!("../../configs/egan-full.toml")),
    ("mgan-full", include_str!("../../configs/mgan-full.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name}; known: {}", preset_names().join(", "))))?;
        Self::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let [h, w] = self.generator.input_size;
        self.generator.check_input(h, w)?;
        if !(self.data.val_fraction > 0.0 && self.data.val_fraction < 1.0) {
            return Err(Error::Config("data.val_fraction must lie in (0, 1)".into()));
        }
        if self.discriminator.in_channels != 1 && self.discriminator.in_channels != 4 {
            return Err(Error::Config("discriminator.in_channels must be 1 or 4".into()));
        }
        Ok(())
    }

    /// Apply `section.key=value` overrides; values parse as TOML literals and
    /// fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut tree, key.trim(), value)?;
        }
        let cfg: Self = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(tree: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not a section")))?;
        if i + 1 == parts.len() {
            if !table.contains_key(*part) && !is_optional(key) {
                return Err(Error::Config(format!("unknown setting {key}")));
            }
            let value = match (table.get(*part), value) {
                (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
                (_, v) => v,
            };
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .get_mut(*part)
            .ok_or_else(|| Error::Config(format!("unknown section in {key}")))?;
    }
    unreachable!("split always yields at least one part")
}

fn is_optional(key: &str) -> bool {
    matches!(key, "data.root" | "data.resize")
}

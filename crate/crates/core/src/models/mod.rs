//! Generators, the patch discriminator, and their parameter containers.

mod config;
mod egan;
mod mgan;
mod patch;
mod scaling;
mod weights;

pub use config::{
    DiscriminatorConfig, GeneratorConfig, NormConfig, StageSpec, Variant, EGAN_STAGES, MGAN_STAGES,
};
pub use scaling::{
    compound_scale, round_to_multiple_of_8, scale_channels, scale_repeats, CompoundScaling, CONSTRAINT_BAND,
};
pub use weights::{read_weights, write_weights, LGC_MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Builder, Forward, Mode, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

use egan::Egan;
use mgan::Mgan;
use patch::PatchDiscriminator;

/// What a [`ModelGraph`] was built from.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Generator(GeneratorConfig),
    Discriminator(DiscriminatorConfig),
}

#[derive(Clone, Debug)]
enum Network {
    Egan(Egan),
    Mgan(Mgan),
    Patch(PatchDiscriminator),
}

/// A built network together with its parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    spec: ModelSpec,
    net: Network,
    pub store: ParamStore,
}

pub fn build_egan_generator(cfg: &GeneratorConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.variant != Variant::Egan {
        return Err(Error::InvalidSpec("expected an egan generator config".into()));
    }
    ModelGraph::generator(cfg, seed)
}

pub fn build_mgan_generator(cfg: &GeneratorConfig, seed: u64) -> Result<ModelGraph> {
    if cfg.variant != Variant::Mgan {
        return Err(Error::InvalidSpec("expected an mgan generator config".into()));
    }
    ModelGraph::generator(cfg, seed)
}

pub fn build_patch_discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<ModelGraph> {
    ModelGraph::discriminator(cfg, seed)
}

impl ModelGraph {
    pub fn generator(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.check_input(cfg.input_size[0], cfg.input_size[1])?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let net = match cfg.variant {
            Variant::Egan => Network::Egan(Egan::build(&mut b, cfg)?),
            Variant::Mgan => Network::Mgan(Mgan::build(&mut b, cfg)?),
        };
        Ok(Self {
            spec: ModelSpec::Generator(cfg.clone()),
            net,
            store,
        })
    }

    pub fn discriminator(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        if cfg.widths.is_empty() || cfg.in_channels == 0 {
            return Err(Error::InvalidSpec(format!("{cfg:?}")));
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let net = Network::Patch(PatchDiscriminator::build(&mut b, cfg)?);
        Ok(Self {
            spec: ModelSpec::Discriminator(cfg.clone()),
            net,
            store,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn tap_names(&self) -> Vec<String> {
        match &self.spec {
            ModelSpec::Generator(c) => c.tap_names(),
            ModelSpec::Discriminator(c) => (1..=c.widths.len()).map(|i| format!("L{i}")).collect(),
        }
    }

    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.store.trainable_count()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = shape else {
            return Err(Error::shape(format!("expected NCHW input, got {shape:?}")));
        };
        match &self.spec {
            ModelSpec::Generator(cfg) => {
                if *c != 3 {
                    return Err(Error::shape(format!("generator expects 3 channels, got {c}")));
                }
                cfg.check_input(*h, *w)
            }
            ModelSpec::Discriminator(cfg) => {
                if *c != cfg.in_channels {
                    return Err(Error::shape(format!(
                        "discriminator expects {} channels, got {c}",
                        cfg.in_channels
                    )));
                }
                let min = cfg.min_input();
                if *h < min || *w < min {
                    return Err(Error::InputTooSmall { h: *h, w: *w, min });
                }
                Ok(())
            }
        }
    }

    /// Run the network on `x` inside an existing pass.
    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        self.check_input(f.tape.shape(x))?;
        match &self.net {
            Network::Egan(n) => n.forward(f, x),
            Network::Mgan(n) => n.forward(f, x),
            Network::Patch(n) => n.forward(f, x),
        }
    }

    /// Inference with running statistics and no gradient tracking.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_taps::<&str>(x, &[])?.0)
    }

    /// Inference that also returns the requested intermediate activations,
    /// in request order.
    pub fn forward_with_taps<S: AsRef<str>>(&self, x: &Tensor, taps: &[S]) -> Result<(Tensor, Vec<(String, Tensor)>)> {
        let known = self.tap_names();
        let wanted: Vec<String> = taps.iter().map(|t| t.as_ref().to_string()).collect();
        if let Some(bad) = wanted.iter().find(|t| !known.contains(t)) {
            return Err(Error::UnknownTap(bad.clone()));
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut f = Forward::new(&mut tape, &self.store, Mode::Eval, false).with_taps(&wanted);
        let y = self.forward(&mut f, xv)?;
        let bound = f.finish();
        let maps = wanted
            .iter()
            .map(|name| {
                let v = bound.taps.iter().find(|(n, _)| n == name).map(|(_, v)| *v).expect("tap recorded");
                (name.clone(), tape.value(v).clone())
            })
            .collect();
        Ok((tape.value(y).clone(), maps))
    }
}

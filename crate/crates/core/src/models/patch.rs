//! PatchGAN discriminator: strided 4×4 convolutions scoring overlapping patches.

use crate::error::Result;
use crate::models::config::DiscriminatorConfig;
use crate::nn::{Builder, Conv2d, ConvSpec, Forward};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub(crate) struct PatchDiscriminator {
    layers: Vec<Conv2d>,
    slope: f64,
}

impl PatchDiscriminator {
    pub(crate) fn build(b: &mut Builder<'_>, cfg: &DiscriminatorConfig) -> Result<Self> {
        let mut cin = cfg.in_channels;
        let mut layers = Vec::with_capacity(cfg.widths.len());
        for (i, &w) in cfg.widths.iter().enumerate() {
            let spec = ConvSpec::new(cin, w, cfg.kernel).stride(cfg.stride);
            layers.push(Conv2d::build(b, &format!("conv{}", i + 1), spec)?);
            cin = w;
        }
        Ok(Self {
            layers,
            slope: cfg.leaky_slope,
        })
    }

    pub(crate) fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let mut y = x;
        let last = self.layers.len() - 1;
        for (i, conv) in self.layers.iter().enumerate() {
            y = conv.forward(f, y)?;
            y = if i == last {
                f.tape.sigmoid(y)?
            } else {
                f.tape.leaky_relu(y, self.slope)?
            };
            f.tap(&format!("L{}", i + 1), y);
        }
        Ok(y)
    }
}

//! Compound-scaled MBConv encoder with an asymmetric bilinear decoder.

use crate::error::{Error, Result};
use crate::models::config::GeneratorConfig;
use crate::models::scaling::{scale_channels, scale_repeats};
use crate::nn::{
    Activation, Builder, Conv2d, ConvBn, ConvSpec, Forward, MbConv, MbConvSpec, NormSpec, ResampleMode,
};
use crate::tensor::Var;

#[derive(Clone, Debug)]
struct DecoderStage {
    skip: usize,
    first: ConvBn,
    second: ConvBn,
}

#[derive(Clone, Debug)]
pub(crate) struct Egan {
    stem: ConvBn,
    stages: Vec<Vec<MbConv>>,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
}

impl Egan {
    pub(crate) fn build(b: &mut Builder<'_>, cfg: &GeneratorConfig) -> Result<Self> {
        let norm: NormSpec = cfg.norm.into();
        let stem_ch = scale_channels(cfg.stem_channels, cfg.width);
        let stem = ConvBn::build(b, "stem", ConvSpec::new(3, stem_ch, 3).stride(2), norm, Activation::Swish)?;

        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut channels = vec![];
        let mut strides = vec![];
        let mut cin = stem_ch;
        let mut stride = 2;
        for (i, st) in cfg.stages.iter().enumerate() {
            let cout = scale_channels(st.channels, cfg.width);
            let repeats = scale_repeats(st.repeats, cfg.depth);
            let blocks = b.scope(format!("block{}", i + 1), |b| {
                (0..repeats)
                    .map(|r| {
                        let spec = MbConvSpec {
                            in_channels: if r == 0 { cin } else { cout },
                            out_channels: cout,
                            expand_ratio: st.expand,
                            kernel: st.kernel,
                            stride: if r == 0 { st.stride } else { 1 },
                            se_reduction: (cfg.se_reduction > 0).then_some(cfg.se_reduction),
                        };
                        MbConv::build(b, &r.to_string(), spec, norm)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            stride *= st.stride;
            stages.push(blocks);
            channels.push(cout);
            strides.push(stride);
            cin = cout;
        }

        let mut decoder = Vec::with_capacity(cfg.decoder_widths.len());
        let mut level = stride;
        for (i, &width) in cfg.decoder_widths.iter().enumerate() {
            level /= 2;
            let skip = strides
                .iter()
                .rposition(|&s| s == level)
                .ok_or_else(|| Error::InvalidSpec(format!("no encoder stage at stride {level} for D{}", i + 1)))?;
            let out = scale_channels(width, cfg.width);
            let stage = b.scope(format!("d{}", i + 1), |b| -> Result<DecoderStage> {
                Ok(DecoderStage {
                    skip,
                    first: ConvBn::build(b, "conv1", ConvSpec::new(cin + channels[skip], out, 3), norm, Activation::Relu)?,
                    second: ConvBn::build(b, "conv2", ConvSpec::new(out, out, 3), norm, Activation::Relu)?,
                })
            })?;
            decoder.push(stage);
            cin = out;
        }
        let head = Conv2d::build(b, "head", ConvSpec::new(cin, 1, 1))?;
        Ok(Self {
            stem,
            stages,
            decoder,
            head,
        })
    }

    pub(crate) fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (_, _, h, w) = f.tape.value(x).dims4()?;
        let mut y = self.stem.forward(f, x)?;
        let mut features = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                y = block.forward(f, y)?;
            }
            f.tap(&format!("Block{}", i + 1), y);
            features.push(y);
        }
        for (i, d) in self.decoder.iter().enumerate() {
            let skip = features[d.skip];
            let (_, _, sh, sw) = f.tape.value(skip).dims4()?;
            let up = f.tape.resample(y, ResampleMode::Bilinear, (sh, sw))?;
            let cat = f.tape.concat(&[up, skip], 1)?;
            y = d.first.forward(f, cat)?;
            y = d.second.forward(f, y)?;
            f.tap(&format!("D{}", i + 1), y);
        }
        let logits = self.head.forward(f, y)?;
        let prob = f.tape.sigmoid(logits)?;
        f.tape.resample(prob, ResampleMode::Bilinear, (h, w))
    }
}

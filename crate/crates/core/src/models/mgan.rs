//! Inverted-residual encoder at output stride 8 with ASPP and a light decoder.

use crate::error::{Error, Result};
use crate::models::config::GeneratorConfig;
use crate::models::scaling::{scale_channels, scale_repeats};
use crate::nn::{
    Activation, Aspp, AsppSpec, Builder, Conv2d, ConvBn, ConvSpec, Forward, InvertedResidual,
    InvertedResidualSpec, NormSpec, ResampleMode, SeparableConv,
};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub(crate) struct Mgan {
    stem: ConvBn,
    stages: Vec<Vec<InvertedResidual>>,
    low_level: usize,
    aspp: Aspp,
    project: ConvBn,
    refine: [SeparableConv; 2],
    head: Conv2d,
}

impl Mgan {
    pub(crate) fn build(b: &mut Builder<'_>, cfg: &GeneratorConfig) -> Result<Self> {
        let norm: NormSpec = cfg.norm.into();
        let stem_ch = scale_channels(cfg.stem_channels, cfg.width);
        let stem = ConvBn::build(b, "stem", ConvSpec::new(3, stem_ch, 3).stride(2), norm, Activation::Relu6)?;

        let mut stages = Vec::with_capacity(cfg.stages.len());
        let mut channels = vec![];
        let mut low_level = None;
        let mut cin = stem_ch;
        let mut stride = 2;
        let mut dilation = 1;
        for (i, st) in cfg.stages.iter().enumerate() {
            let cout = scale_channels(st.channels, cfg.width);
            let repeats = scale_repeats(st.repeats, cfg.depth);
            let mut s = st.stride;
            if stride * s > cfg.output_stride {
                dilation *= s;
                s = 1;
            } else {
                stride *= s;
            }
            let blocks = b.scope(format!("block{}", i + 1), |b| {
                (0..repeats)
                    .map(|r| {
                        let spec = InvertedResidualSpec {
                            in_channels: if r == 0 { cin } else { cout },
                            out_channels: cout,
                            expand_ratio: st.expand,
                            stride: if r == 0 { s } else { 1 },
                            dilation,
                        };
                        InvertedResidual::build(b, &r.to_string(), spec, norm)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            if stride == 4 {
                low_level = Some(i);
            }
            stages.push(blocks);
            channels.push(cout);
            cin = cout;
        }
        if stride != cfg.output_stride {
            return Err(Error::InvalidSpec(format!(
                "encoder reaches stride {stride}, expected {}",
                cfg.output_stride
            )));
        }
        let low_level = low_level.ok_or_else(|| Error::InvalidSpec("no stride-4 encoder stage".into()))?;

        let aspp_ch = scale_channels(cfg.aspp_channels, cfg.width);
        let aspp = Aspp::build(
            b,
            "aspp",
            AsppSpec {
                in_channels: cin,
                branch_channels: aspp_ch,
                out_channels: aspp_ch,
                rates: cfg.aspp_rates.clone(),
            },
            norm,
        )?;
        let low_ch = scale_channels(cfg.low_level_channels, cfg.width);
        let project = ConvBn::build(
            b,
            "low_level",
            ConvSpec::new(channels[low_level], low_ch, 1),
            norm,
            Activation::Relu,
        )?;
        let dec = scale_channels(
            *cfg.decoder_widths
                .first()
                .ok_or_else(|| Error::InvalidSpec("missing decoder width".into()))?,
            cfg.width,
        );
        let refine = [
            SeparableConv::build(b, "decoder.conv1", aspp_ch + low_ch, dec, 1, norm)?,
            SeparableConv::build(b, "decoder.conv2", dec, dec, 1, norm)?,
        ];
        let head = Conv2d::build(b, "head", ConvSpec::new(dec, 1, 1))?;
        Ok(Self {
            stem,
            stages,
            low_level,
            aspp,
            project,
            refine,
            head,
        })
    }

    pub(crate) fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (_, _, h, w) = f.tape.value(x).dims4()?;
        let mut y = self.stem.forward(f, x)?;
        let mut low = y;
        for (i, stage) in self.stages.iter().enumerate() {
            for block in stage {
                y = block.forward(f, y)?;
            }
            f.tap(&format!("Block{}", i + 1), y);
            if i == self.low_level {
                low = y;
            }
        }
        let context = self.aspp.forward(f, y)?;
        f.tap("ASPP", context);
        let (_, _, lh, lw) = f.tape.value(low).dims4()?;
        let up = f.tape.resample(context, ResampleMode::Bilinear, (lh, lw))?;
        let low = self.project.forward(f, low)?;
        let mut y = f.tape.concat(&[up, low], 1)?;
        for conv in &self.refine {
            y = conv.forward(f, y)?;
        }
        f.tap("Decoder", y);
        let y = f.tape.resample(y, ResampleMode::Bilinear, (h, w))?;
        let logits = self.head.forward(f, y)?;
        f.tape.sigmoid(logits)
    }
}

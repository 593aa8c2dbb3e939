//! Serializable architecture descriptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NormSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Egan,
    Mgan,
}

/// One encoder stage before width/depth scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub expand: usize,
    pub channels: usize,
    pub repeats: usize,
    pub stride: usize,
    pub kernel: usize,
}

impl StageSpec {
    pub const fn new(expand: usize, channels: usize, repeats: usize, stride: usize, kernel: usize) -> Self {
        Self {
            expand,
            channels,
            repeats,
            stride,
            kernel,
        }
    }
}

/// Seven-stage compound-scaled encoder base table.
pub const EGAN_STAGES: [StageSpec; 7] = [
    StageSpec::new(1, 16, 1, 1, 3),
    StageSpec::new(6, 24, 2, 2, 3),
    StageSpec::new(6, 40, 2, 2, 5),
    StageSpec::new(6, 80, 3, 2, 3),
    StageSpec::new(6, 112, 3, 1, 5),
    StageSpec::new(6, 192, 4, 2, 5),
    StageSpec::new(6, 320, 1, 1, 3),
];

/// Inverted-residual table `(t, c, n, s)`; all depthwise kernels are 3×3.
pub const MGAN_STAGES: [StageSpec; 7] = [
    StageSpec::new(1, 16, 1, 1, 3),
    StageSpec::new(6, 24, 2, 2, 3),
    StageSpec::new(6, 32, 3, 2, 3),
    StageSpec::new(6, 64, 4, 2, 3),
    StageSpec::new(6, 96, 3, 1, 3),
    StageSpec::new(6, 160, 3, 2, 3),
    StageSpec::new(6, 320, 1, 1, 3),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        let n = NormSpec::default();
        Self {
            eps: n.eps,
            momentum: n.momentum,
        }
    }
}

impl From<NormConfig> for NormSpec {
    fn from(c: NormConfig) -> Self {
        NormSpec {
            eps: c.eps,
            momentum: c.momentum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub variant: Variant,
    /// `[H, W]`; the input always has 3 channels.
    pub input_size: [usize; 2],
    pub width: f64,
    pub depth: f64,
    pub stem_channels: usize,
    pub stages: Vec<StageSpec>,
    /// EGAN: widths of D1..D4. MGAN: width of the two decoder convolutions.
    pub decoder_widths: Vec<usize>,
    pub se_reduction: usize,
    pub output_stride: usize,
    pub aspp_rates: Vec<usize>,
    pub aspp_channels: usize,
    pub low_level_channels: usize,
    #[serde(default)]
    pub norm: NormConfig,
}

impl GeneratorConfig {
    pub fn egan(input: usize, width: f64, depth: f64) -> Self {
        Self {
            variant: Variant::Egan,
            input_size: [input, input],
            width,
            depth,
            stem_channels: 32,
            stages: EGAN_STAGES.to_vec(),
            decoder_widths: vec![256, 128, 64, 32],
            se_reduction: 4,
            output_stride: 32,
            aspp_rates: Vec::new(),
            aspp_channels: 0,
            low_level_channels: 0,
            norm: NormConfig::default(),
        }
    }

    pub fn mgan(input: usize, width: f64) -> Self {
        Self {
            variant: Variant::Mgan,
            input_size: [input, input],
            width,
            depth: 1.0,
            stem_channels: 32,
            stages: MGAN_STAGES.to_vec(),
            decoder_widths: vec![256],
            se_reduction: 0,
            output_stride: 8,
            aspp_rates: vec![1, 6, 12, 18],
            aspp_channels: 256,
            low_level_channels: 48,
            norm: NormConfig::default(),
        }
    }

    /// Spatial divisor the input extents must respect.
    pub fn input_divisor(&self) -> usize {
        match self.variant {
            Variant::Egan => 32,
            Variant::Mgan => self.output_stride,
        }
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.input_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::IndivisibleInput { h, w, divisor: d });
        }
        Ok(())
    }

    pub fn tap_names(&self) -> Vec<String> {
        match self.variant {
            Variant::Egan => (1..=self.stages.len())
                .map(|i| format!("Block{i}"))
                .chain((1..=self.decoder_widths.len()).map(|i| format!("D{i}")))
                .collect(),
            Variant::Mgan => (1..=self.stages.len())
                .map(|i| format!("Block{i}"))
                .chain(["ASPP".to_string(), "Decoder".to_string()])
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub leaky_slope: f64,
    /// 1 scores the mask alone; 4 also sees the RGB image.
    pub in_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            widths: vec![64, 128, 256, 512, 1],
            kernel: 4,
            stride: 2,
            leaky_slope: 0.2,
            in_channels: 1,
        }
    }
}

impl DiscriminatorConfig {
    /// Hidden widths multiplied by `factor`; the final single-channel layer is kept.
    pub fn scaled(factor: f64) -> Self {
        let mut c = Self::default();
        let last = c.widths.len() - 1;
        for w in &mut c.widths[..last] {
            *w = ((*w as f64 * factor).round() as usize).max(1);
        }
        c
    }

    pub fn min_input(&self) -> usize {
        self.stride.pow(self.widths.len() as u32)
    }

    /// Receptive field of one patch score.
    pub fn receptive_field(&self) -> usize {
        crate::nn::receptive_field(&vec![(self.kernel, self.stride); self.widths.len()])
    }
}

//! Parameterized building blocks shared by the generators and discriminator.

use crate::error::{Error, Result};
use crate::nn::{Builder, ConvSpec, Forward, Mode, ParamId, ParamRole};
use crate::tensor::{Reduce, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Identity,
    Relu,
    Relu6,
    Swish,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    pub fn apply(self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Relu => f.tape.relu(x),
            Activation::Relu6 => f.tape.relu6(x),
            Activation::Swish => f.tape.swish(x),
            Activation::LeakyRelu(s) => f.tape.leaky_relu(x, s),
            Activation::Sigmoid => f.tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Conv2d {
    pub fn build(b: &mut Builder<'_>, name: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        b.scope(name, |b| {
            let weight = b.weight("weight", &spec.weight_shape(), spec.fan_in());
            let bias = spec
                .bias
                .then(|| b.constant("bias", Tensor::zeros(vec![spec.out_channels]), ParamRole::Weight));
            Ok(Self { spec, weight, bias })
        })
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> Option<ParamId> {
        self.bias
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.conv2d(x, w, b, &self.spec)
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

/// Batch-norm hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSpec {
    pub eps: f64,
    /// Running statistics follow `r ← momentum·r + (1 − momentum)·batch`.
    pub momentum: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            momentum: 0.99,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub spec: NormSpec,
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

impl BatchNorm {
    pub fn build(b: &mut Builder<'_>, name: &str, channels: usize, spec: NormSpec) -> Self {
        b.scope(name, |b| Self {
            channels,
            spec,
            gamma: b.constant("gamma", Tensor::ones(vec![channels]), ParamRole::Weight),
            beta: b.constant("beta", Tensor::zeros(vec![channels]), ParamRole::Weight),
            running_mean: b.constant("running_mean", Tensor::zeros(vec![channels]), ParamRole::Buffer),
            running_var: b.constant("running_var", Tensor::ones(vec![channels]), ParamRole::Buffer),
        })
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn running_stats(&self) -> (ParamId, ParamId) {
        (self.running_mean, self.running_var)
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        match f.mode() {
            Mode::Train => {
                let (y, stats) = f.tape.batch_norm_train(x, gamma, beta, self.spec.eps)?;
                let m = self.spec.momentum;
                let unbias = if stats.count > 1 {
                    stats.count as f64 / (stats.count - 1) as f64
                } else {
                    1.0
                };
                let old_mean = f.buffer(self.running_mean).data();
                let old_var = f.buffer(self.running_var).data();
                let mean: Vec<f64> = old_mean
                    .iter()
                    .zip(&stats.mean)
                    .map(|(o, b)| m * o + (1.0 - m) * b)
                    .collect();
                let var: Vec<f64> = old_var
                    .iter()
                    .zip(&stats.var)
                    .map(|(o, b)| m * o + (1.0 - m) * b * unbias)
                    .collect();
                f.update_buffer(self.running_mean, Tensor::from_parts(vec![self.channels], mean));
                f.update_buffer(self.running_var, Tensor::from_parts(vec![self.channels], var));
                Ok(y)
            }
            Mode::Eval => {
                let mean = f.buffer(self.running_mean).data().to_vec();
                let var = f.buffer(self.running_var).data().to_vec();
                f.tape.batch_norm_eval(x, gamma, beta, &mean, &var, self.spec.eps)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

/// Convolution, batch norm, activation.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub act: Activation,
}

impl ConvBn {
    pub fn build(b: &mut Builder<'_>, name: &str, spec: ConvSpec, norm: NormSpec, act: Activation) -> Result<Self> {
        b.scope(name, |b| {
            let channels = spec.out_channels;
            Ok(Self {
                conv: Conv2d::build(b, "conv", spec.bias(false))?,
                bn: BatchNorm::build(b, "bn", channels, norm),
                act,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, y)?;
        self.act.apply(f, y)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }
}

/// Channel gating `x · sigmoid(W₂·relu(W₁·avgpool(x)))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub channels: usize,
    pub reduced: usize,
    reduce: Conv2d,
    expand: Conv2d,
}

impl SqueezeExcite {
    pub fn build(b: &mut Builder<'_>, name: &str, channels: usize, reduced: usize) -> Result<Self> {
        if reduced == 0 {
            return Err(Error::InvalidSpec("squeeze-excitation with zero reduced channels".into()));
        }
        b.scope(name, |b| {
            Ok(Self {
                channels,
                reduced,
                reduce: Conv2d::build(b, "reduce", ConvSpec::new(channels, reduced, 1))?,
                expand: Conv2d::build(b, "expand", ConvSpec::new(reduced, channels, 1))?,
            })
        })
    }

    pub fn reduce_conv(&self) -> &Conv2d {
        &self.reduce
    }

    pub fn expand_conv(&self) -> &Conv2d {
        &self.expand
    }

    /// Per-channel gate in (0, 1), shaped `[N, C, 1, 1]`.
    pub fn gate(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let (n, c, _, _) = f.tape.value(x).dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!("SE expects {} channels, got {c}", self.channels)));
        }
        let pooled = f.tape.reduce(Reduce::Mean, x, &[2, 3])?;
        let pooled = f.tape.reshape(pooled, &[n, c, 1, 1])?;
        let s = self.reduce.forward(f, pooled)?;
        let s = f.tape.relu(s)?;
        let s = self.expand.forward(f, s)?;
        f.tape.sigmoid(s)
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let gate = self.gate(f, x)?;
        f.tape.mul(x, gate)
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }
}

/// Mobile inverted bottleneck with squeeze-and-excitation and swish.
#[derive(Clone, Debug, PartialEq)]
pub struct MbConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expand_ratio: usize,
    pub kernel: usize,
    pub stride: usize,
    /// SE bottleneck is `max(1, in_channels / se_reduction)`.
    pub se_reduction: Option<usize>,
}

impl MbConvSpec {
    fn validate(&self) -> Result<()> {
        if self.expand_ratio < 1 || !(1..=2).contains(&self.stride) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn mid_channels(&self) -> usize {
        self.in_channels * self.expand_ratio
    }

    pub fn se_channels(&self) -> Option<usize> {
        self.se_reduction.map(|r| (self.in_channels / r).max(1))
    }

    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let (cin, mid, cout, k) = (self.in_channels, self.mid_channels(), self.out_channels, self.kernel);
        let expand = if self.expand_ratio == 1 { 0 } else { cin * mid + 2 * mid };
        let depthwise = k * k * mid + 2 * mid;
        let se = self.se_channels().map_or(0, |r| mid * r + r + r * mid + mid);
        let project = mid * cout + 2 * cout;
        expand + depthwise + se + project
    }
}

#[derive(Clone, Debug)]
pub struct MbConv {
    pub spec: MbConvSpec,
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    se: Option<SqueezeExcite>,
    project: ConvBn,
}

impl MbConv {
    pub fn build(b: &mut Builder<'_>, name: &str, spec: MbConvSpec, norm: NormSpec) -> Result<Self> {
        spec.validate()?;
        b.scope(name, |b| {
            let mid = spec.mid_channels();
            let expand = (spec.expand_ratio != 1)
                .then(|| ConvBn::build(b, "expand", ConvSpec::new(spec.in_channels, mid, 1), norm, Activation::Swish))
                .transpose()?;
            let depthwise = ConvBn::build(
                b,
                "depthwise",
                ConvSpec::depthwise(mid, spec.kernel).stride(spec.stride),
                norm,
                Activation::Swish,
            )?;
            let se = spec
                .se_channels()
                .map(|r| SqueezeExcite::build(b, "se", mid, r))
                .transpose()?;
            let project = ConvBn::build(
                b,
                "project",
                ConvSpec::new(mid, spec.out_channels, 1),
                norm,
                Activation::Identity,
            )?;
            Ok(Self {
                spec,
                expand,
                depthwise,
                se,
                project,
            })
        })
    }

    pub fn project(&self) -> &ConvBn {
        &self.project
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let mut y = x;
        if let Some(e) = &self.expand {
            y = e.forward(f, y)?;
        }
        y = self.depthwise.forward(f, y)?;
        if let Some(se) = &self.se {
            y = se.forward(f, y)?;
        }
        y = self.project.forward(f, y)?;
        if self.spec.has_skip() {
            y = f.tape.add(y, x)?;
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.expand.as_ref().map_or(0, ConvBn::param_count)
            + self.depthwise.param_count()
            + self.se.as_ref().map_or(0, SqueezeExcite::param_count)
            + self.project.param_count()
    }
}

/// Inverted residual without squeeze-excitation: relu6 expansion, dilated
/// depthwise convolution, linear projection.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedResidualSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub expand_ratio: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl InvertedResidualSpec {
    pub fn mid_channels(&self) -> usize {
        self.in_channels * self.expand_ratio
    }

    pub fn has_skip(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn param_count(&self) -> usize {
        let (cin, mid, cout) = (self.in_channels, self.mid_channels(), self.out_channels);
        let expand = if self.expand_ratio == 1 { 0 } else { cin * mid + 2 * mid };
        expand + 9 * mid + 2 * mid + mid * cout + 2 * cout
    }
}

#[derive(Clone, Debug)]
pub struct InvertedResidual {
    pub spec: InvertedResidualSpec,
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    project: ConvBn,
}

impl InvertedResidual {
    pub fn build(b: &mut Builder<'_>, name: &str, spec: InvertedResidualSpec, norm: NormSpec) -> Result<Self> {
        if spec.expand_ratio < 1 || !(1..=2).contains(&spec.stride) || spec.dilation < 1 {
            return Err(Error::InvalidSpec(format!("{spec:?}")));
        }
        b.scope(name, |b| {
            let mid = spec.mid_channels();
            let expand = (spec.expand_ratio != 1)
                .then(|| ConvBn::build(b, "expand", ConvSpec::new(spec.in_channels, mid, 1), norm, Activation::Relu6))
                .transpose()?;
            let depthwise = ConvBn::build(
                b,
                "depthwise",
                ConvSpec::depthwise(mid, 3).stride(spec.stride).dilation(spec.dilation),
                norm,
                Activation::Relu6,
            )?;
            let project = ConvBn::build(
                b,
                "project",
                ConvSpec::new(mid, spec.out_channels, 1),
                norm,
                Activation::Identity,
            )?;
            Ok(Self {
                spec,
                expand,
                depthwise,
                project,
            })
        })
    }

    pub fn has_expansion(&self) -> bool {
        self.expand.is_some()
    }

    pub fn depthwise(&self) -> &ConvBn {
        &self.depthwise
    }

    pub fn project(&self) -> &ConvBn {
        &self.project
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let mut y = x;
        if let Some(e) = &self.expand {
            y = e.forward(f, y)?;
        }
        y = self.depthwise.forward(f, y)?;
        y = self.project.forward(f, y)?;
        if self.spec.has_skip() {
            y = f.tape.add(y, x)?;
        }
        Ok(y)
    }

    pub fn param_count(&self) -> usize {
        self.expand.as_ref().map_or(0, ConvBn::param_count) + self.depthwise.param_count() + self.project.param_count()
    }
}

/// Depthwise `k`×`k` (optionally dilated) then pointwise, each with batch norm and relu.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub depthwise: ConvBn,
    pub pointwise: ConvBn,
}

impl SeparableConv {
    pub fn build(
        b: &mut Builder<'_>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        dilation: usize,
        norm: NormSpec,
    ) -> Result<Self> {
        b.scope(name, |b| {
            Ok(Self {
                depthwise: ConvBn::build(
                    b,
                    "depthwise",
                    ConvSpec::depthwise(in_channels, 3).dilation(dilation),
                    norm,
                    Activation::Relu,
                )?,
                pointwise: ConvBn::build(
                    b,
                    "pointwise",
                    ConvSpec::new(in_channels, out_channels, 1),
                    norm,
                    Activation::Relu,
                )?,
            })
        })
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(f, x)?;
        self.pointwise.forward(f, y)
    }

    pub fn param_count(&self) -> usize {
        self.depthwise.param_count() + self.pointwise.param_count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsppSpec {
    pub in_channels: usize,
    pub branch_channels: usize,
    pub out_channels: usize,
    pub rates: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum AsppBranch {
    /// Rate 1: plain 1×1 convolution.
    Pointwise(ConvBn),
    /// Rate > 1: dilated 3×3 depthwise then 1×1.
    Atrous(SeparableConv),
}

impl AsppBranch {
    fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        match self {
            AsppBranch::Pointwise(c) => c.forward(f, x),
            AsppBranch::Atrous(s) => s.forward(f, x),
        }
    }

    fn param_count(&self) -> usize {
        match self {
            AsppBranch::Pointwise(c) => c.param_count(),
            AsppBranch::Atrous(s) => s.param_count(),
        }
    }
}

/// Atrous spatial pyramid pooling: parallel branches at several dilation
/// rates, concatenated on the channel axis and fused by a 1×1 convolution.
#[derive(Clone, Debug)]
pub struct Aspp {
    pub spec: AsppSpec,
    pub branches: Vec<AsppBranch>,
    pub fuse: ConvBn,
}

impl Aspp {
    pub fn build(b: &mut Builder<'_>, name: &str, spec: AsppSpec, norm: NormSpec) -> Result<Self> {
        if spec.rates.is_empty() || spec.rates.contains(&0) {
            return Err(Error::InvalidSpec(format!("ASPP rates {:?}", spec.rates)));
        }
        b.scope(name, |b| {
            let mut branches = Vec::with_capacity(spec.rates.len());
            for (i, &rate) in spec.rates.iter().enumerate() {
                let label = format!("branch{i}");
                branches.push(if rate == 1 {
                    AsppBranch::Pointwise(ConvBn::build(
                        b,
                        &label,
                        ConvSpec::new(spec.in_channels, spec.branch_channels, 1),
                        norm,
                        Activation::Relu,
                    )?)
                } else {
                    AsppBranch::Atrous(SeparableConv::build(
                        b,
                        &label,
                        spec.in_channels,
                        spec.branch_channels,
                        rate,
                        norm,
                    )?)
                });
            }
            let fuse = ConvBn::build(
                b,
                "fuse",
                ConvSpec::new(spec.branch_channels * spec.rates.len(), spec.out_channels, 1),
                norm,
                Activation::Relu,
            )?;
            Ok(Self { spec, branches, fuse })
        })
    }

    /// Outputs of the individual branches before concatenation.
    pub fn branch_outputs(&self, f: &mut Forward<'_>, x: Var) -> Result<Vec<Var>> {
        self.branches.iter().map(|br| br.forward(f, x)).collect()
    }

    pub fn forward(&self, f: &mut Forward<'_>, x: Var) -> Result<Var> {
        let parts = self.branch_outputs(f, x)?;
        let cat = f.tape.concat(&parts, 1)?;
        self.fuse.forward(f, cat)
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(AsppBranch::param_count).sum::<usize>() + self.fuse.param_count()
    }
}

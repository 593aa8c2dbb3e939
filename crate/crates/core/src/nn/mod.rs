//! Convolutional building blocks.

mod blocks;
mod conv;
mod norm;
mod params;
mod resample;

pub use blocks::{
    Activation, Aspp, AsppBranch, AsppSpec, BatchNorm, Conv2d, ConvBn, InvertedResidual, InvertedResidualSpec,
    MbConv, MbConvSpec, NormSpec, SeparableConv, SqueezeExcite,
};
pub use conv::{receptive_field, ConvSpec, Padding};
pub use norm::BatchStats;
pub use params::{Bindings, Builder, Forward, Mode, Param, ParamId, ParamRole, ParamStore};
pub use resample::ResampleMode;

//! Adversarial skin-lesion segmentation.
//!
//! Two generator families (a compound-scaled MBConv encoder with an
//! asymmetric decoder, and a lightweight inverted-residual encoder with
//! atrous pyramid pooling) are trained against a PatchGAN discriminator
//! using dice, morphological smoothing and adversarial losses. Everything
//! runs on a small reverse-mode autodiff engine in [`tensor`].

pub mod data;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod profile;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};

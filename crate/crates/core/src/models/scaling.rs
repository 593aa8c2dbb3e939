//! Compound scaling of depth, width and resolution by a single exponent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed band for `α·β²·γ²` around the nominal value 2.
pub const CONSTRAINT_BAND: (f64, f64) = (1.8, 2.2);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompoundScaling {
    pub phi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CompoundScaling {
    pub fn new(phi: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let s = Self { phi, alpha, beta, gamma };
        s.validate()?;
        Ok(s)
    }

    /// The usual base coefficients α = 1.2, β = 1.1, γ = 1.15.
    pub fn standard(phi: f64) -> Self {
        Self {
            phi,
            alpha: 1.2,
            beta: 1.1,
            gamma: 1.15,
        }
    }

    pub fn constraint_product(&self) -> f64 {
        self.alpha * self.beta * self.beta * self.gamma * self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.constraint_product();
        let ok = self.phi >= 0.0
            && self.alpha >= 1.0
            && self.beta >= 1.0
            && self.gamma >= 1.0
            && (CONSTRAINT_BAND.0..=CONSTRAINT_BAND.1).contains(&p);
        if ok {
            Ok(())
        } else {
            Err(Error::ConstraintViolation(p))
        }
    }

    pub fn depth(&self) -> f64 {
        self.alpha.powf(self.phi)
    }

    pub fn width(&self) -> f64 {
        self.beta.powf(self.phi)
    }

    pub fn resolution(&self) -> f64 {
        self.gamma.powf(self.phi)
    }
}

/// Nearest multiple of 8 (at least 8), bumped up one step if rounding lost
/// more than 10% of `x`.
pub fn round_to_multiple_of_8(x: f64) -> usize {
    let mut r = (((x + 4.0) / 8.0).floor() as usize * 8).max(8);
    if (r as f64) < 0.9 * x {
        r += 8;
    }
    r
}

/// `channels·width` rounded to a multiple of 8.
pub fn scale_channels(channels: usize, width: f64) -> usize {
    round_to_multiple_of_8(channels as f64 * width)
}

/// `ceil(repeats·depth)`.
pub fn scale_repeats(repeats: usize, depth: f64) -> usize {
    // Tolerate float noise just above an integer.
    let x = repeats as f64 * depth;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Scaled `(channels, repeats, resolution)`.
pub fn compound_scale(
    base: &CompoundScaling,
    channels: usize,
    repeats: usize,
    resolution: usize,
) -> Result<(usize, usize, usize)> {
    base.validate()?;
    if base.phi == 0.0 {
        return Ok((channels, repeats, resolution));
    }
    Ok((
        scale_channels(channels, base.width()),
        scale_repeats(repeats, base.depth()),
        (resolution as f64 * base.resolution()).round() as usize,
    ))
}

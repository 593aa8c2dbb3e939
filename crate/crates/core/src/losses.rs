//! Training objectives: dice, morphological smoothing, their combination,
//! and the two sides of the adversarial game.
//!
//! Mask tensors are `[..., H, W]`; any leading axes index independent images
//! and per-image losses are averaged over them.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Log arguments are kept at least this far from 0 and 1.
pub const LOG_CLAMP: f64 = 1e-7;

/// A ground-truth mask and a prediction of the same shape.
#[derive(Clone, Debug)]
pub struct MaskPair {
    pub truth: Tensor,
    pub prediction: Tensor,
}

impl MaskPair {
    pub fn new(truth: Tensor, prediction: Tensor) -> Result<Self> {
        if truth.shape() != prediction.shape() {
            return Err(Error::shape(format!(
                "mask pair {:?} vs {:?}",
                truth.shape(),
                prediction.shape()
            )));
        }
        if truth.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::DomainError("truth mask is not binary".into()));
        }
        if prediction.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::DomainError("prediction outside [0, 1]".into()));
        }
        Ok(Self { truth, prediction })
    }

    pub fn dice_loss(&self) -> Result<f64> {
        eval_scalar(self, dice_loss)
    }

    pub fn smoothing_loss(&self) -> Result<f64> {
        eval_scalar(self, smoothing_loss)
    }

    pub fn combined_loss(&self, smoothing_weight: f64) -> Result<f64> {
        eval_scalar(self, |t, p, y| combined_loss(t, p, y, smoothing_weight))
    }
}

fn eval_scalar(pair: &MaskPair, f: impl Fn(&mut Tape, Var, Var) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pair.prediction.clone());
    let y = tape.constant(pair.truth.clone());
    let out = f(&mut tape, p, y)?;
    tape.value(out).item()
}

/// Split a mask shape into (number of images, pixels per image).
fn image_split(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        0 | 1 => Err(Error::shape(format!("mask needs at least H×W, got {shape:?}"))),
        r => {
            let pixels = shape[r - 2] * shape[r - 1];
            Ok((shape.iter().product::<usize>() / pixels, pixels))
        }
    }
}

/// Mean over images of `1 − 2Σ(ŷ·y) / (Σŷ² + Σy²)`.
///
/// An image where both masks are empty scores 0 with zero gradient.
pub fn dice_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if tape.shape(truth) != shape.as_slice() {
        return Err(Error::shape(format!("dice {shape:?} vs {:?}", tape.shape(truth))));
    }
    let (n, pixels) = image_split(&shape)?;
    let flat = [n, pixels];
    let p = tape.reshape(pred, &flat)?;
    let y = tape.reshape(truth, &flat)?;
    let py = tape.mul(p, y)?;
    let inter = tape.reduce(crate::tensor::Reduce::Sum, py, &[1])?;
    let pp = tape.mul(p, p)?;
    let pp = tape.reduce(crate::tensor::Reduce::Sum, pp, &[1])?;
    let yy = tape.mul(y, y)?;
    let yy = tape.reduce(crate::tensor::Reduce::Sum, yy, &[1])?;
    let denom = tape.add(pp, yy)?;
    let twice = tape.scale(inter, 2.0)?;
    let numer = tape.sub(denom, twice)?;
    let empty: Vec<bool> = tape.value(denom).data().iter().map(|&d| d == 0.0).collect();
    let denom = if empty.iter().any(|&e| e) {
        let pad = tape.constant(Tensor::from_fn(vec![n], |i| if empty[i] { 1.0 } else { 0.0 }));
        tape.add(denom, pad)?
    } else {
        denom
    };
    let loss = tape.div(numer, denom)?;
    tape.mean_all(loss)
}

/// Morphological smoothing loss, averaged over images:
/// Σᵢ Σ_{j ∈ N⁴(i)} [yᵢ = yⱼ]·yᵢ·|ŷᵢ − ŷⱼ|, over ordered neighbor pairs.
pub fn smoothing_loss(tape: &mut Tape, pred: Var, truth: Var) -> Result<Var> {
    let shape = tape.shape(pred).to_vec();
    if tape.shape(truth) != shape.as_slice() {
        return Err(Error::shape(format!("smoothing {shape:?} vs {:?}", tape.shape(truth))));
    }
    let (n, _) = image_split(&shape)?;
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let y = tape.value(truth).data().to_vec();
    let p = tape.value(pred).data();
    // Unordered horizontal and vertical same-class foreground pairs; each
    // counts twice in the ordered sum.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for img in 0..n {
        let o = img * h * w;
        for r in 0..h {
            for c in 0..w {
                let i = o + r * w + c;
                if y[i] == 0.0 {
                    continue;
                }
                if c + 1 < w && y[i + 1] == y[i] {
                    pairs.push((i, i + 1));
                }
                if r + 1 < h && y[i + w] == y[i] {
                    pairs.push((i, i + w));
                }
            }
        }
    }
    let mut total = 0.0;
    let mut margin = f64::INFINITY;
    for &(i, j) in &pairs {
        let d = p[i] - p[j];
        total += 2.0 * y[i] * d.abs();
        margin = margin.min(d.abs());
    }
    if margin.is_finite() {
        tape.note_kink_margin(margin);
    }
    let value = Tensor::scalar(total / n as f64);
    tape.record("smoothing_loss", value, &[pred], move |ctx| {
        let p = ctx.inputs[0].data();
        let g = ctx.grad.data()[0] / n as f64;
        let mut d = vec![0.0; p.len()];
        for &(i, j) in &pairs {
            let diff = p[i] - p[j];
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            let k = 2.0 * y[i] * s * g;
            d[i] += k;
            d[j] -= k;
        }
        vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d))]
    })
}

/// `dice + smoothing_weight · smoothing`.
pub fn combined_loss(tape: &mut Tape, pred: Var, truth: Var, smoothing_weight: f64) -> Result<Var> {
    let (_, total) = combined_loss_parts(tape, pred, truth, smoothing_weight)?;
    Ok(total)
}

/// Component values plus the combined loss.
pub struct CombinedParts {
    pub dice: Var,
    pub smoothing: Var,
}

pub fn combined_loss_parts(
    tape: &mut Tape,
    pred: Var,
    truth: Var,
    smoothing_weight: f64,
) -> Result<(CombinedParts, Var)> {
    let dice = dice_loss(tape, pred, truth)?;
    let smoothing = smoothing_loss(tape, pred, truth)?;
    let weighted = tape.scale(smoothing, smoothing_weight)?;
    let total = tape.add(dice, weighted)?;
    Ok((CombinedParts { dice, smoothing }, total))
}

fn clamp_log(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = tape.unary(crate::tensor::Unary::Clamp(LOG_CLAMP, 1.0 - LOG_CLAMP), x)?;
    tape.log(c)
}

fn check_unit_interval(tape: &Tape, v: Var) -> Result<()> {
    if tape.value(v).data().iter().any(|&d| !(0.0..=1.0).contains(&d)) {
        return Err(Error::DomainError("discriminator output outside (0, 1)".into()));
    }
    Ok(())
}

/// Patch maps scored by the discriminator and whether each came from ground truth.
pub struct AdversarialBatch {
    pub items: Vec<(Var, bool)>,
}

/// −mean over all patch pixels of `γ·log D + (1 − γ)·log(1 − D)`,
/// where γ = 1 for ground-truth maps.
pub fn discriminator_loss_batch(tape: &mut Tape, batch: &AdversarialBatch) -> Result<Var> {
    let mut sums = Vec::with_capacity(batch.items.len());
    let mut count = 0usize;
    for &(d, real) in &batch.items {
        check_unit_interval(tape, d)?;
        count += tape.value(d).len();
        let arg = if real {
            d
        } else {
            let neg = tape.scale(d, -1.0)?;
            tape.unary(crate::tensor::Unary::Shift(1.0), neg)?
        };
        let l = clamp_log(tape, arg)?;
        sums.push(tape.sum_all(l)?);
    }
    let mut acc = *sums.first().ok_or_else(|| Error::shape("empty adversarial batch"))?;
    for &s in &sums[1..] {
        acc = tape.add(acc, s)?;
    }
    tape.scale(acc, -1.0 / count as f64)
}

/// Discriminator loss for one real and one generated patch map.
pub fn discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    discriminator_loss_batch(
        tape,
        &AdversarialBatch {
            items: vec![(d_real, true), (d_fake, false)],
        },
    )
}

/// Generator side of the adversarial game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialForm {
    /// −mean log D(G(x)).
    NonSaturating,
    /// mean log(1 − D(G(x))).
    Saturating,
}

pub fn generator_adversarial_loss(tape: &mut Tape, d_fake: Var, form: AdversarialForm) -> Result<Var> {
    check_unit_interval(tape, d_fake)?;
    match form {
        AdversarialForm::NonSaturating => {
            let l = clamp_log(tape, d_fake)?;
            let m = tape.mean_all(l)?;
            tape.scale(m, -1.0)
        }
        AdversarialForm::Saturating => {
            let neg = tape.scale(d_fake, -1.0)?;
            let one_minus = tape.unary(crate::tensor::Unary::Shift(1.0), neg)?;
            let l = clamp_log(tape, one_minus)?;
            tape.mean_all(l)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn dice_examples() {
        let y = t(&[1, 2], &[1.0, 0.0]);
        let p = t(&[1, 2], &[0.5, 0.5]);
        let pair = MaskPair::new(y.clone(), p).unwrap();
        assert_eq!(pair.dice_loss().unwrap(), 1.0 / 3.0);
        let same = MaskPair::new(y.clone(), y.clone()).unwrap();
        assert_eq!(same.dice_loss().unwrap(), 0.0);
        let zero = MaskPair::new(y, Tensor::zeros(vec![1, 2])).unwrap();
        assert_eq!(zero.dice_loss().unwrap(), 1.0);
    }

    #[test]
    fn dice_both_empty_is_zero_with_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::zeros(vec![3, 3]));
        let y = tape.constant(Tensor::zeros(vec![3, 3]));
        let l = dice_loss(&mut tape, p, y).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(&tape, p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn smoothing_worked_example() {
        let y = t(&[2, 2], &[1.0, 1.0, 0.0, 0.0]);
        let p = t(&[2, 2], &[1.0, 0.6, 0.2, 0.2]);
        let pair = MaskPair::new(y, p).unwrap();
        assert!((pair.smoothing_loss().unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn smoothing_vanishes_on_constant_or_empty() {
        let y = t(&[2, 3], &[1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let c = MaskPair::new(y, Tensor::full(vec![2, 3], 0.3)).unwrap();
        assert_eq!(c.smoothing_loss().unwrap(), 0.0);
        let p = t(&[2, 3], &[0.1, 0.9, 0.4, 0.3, 0.2, 0.8]);
        let e = MaskPair::new(Tensor::zeros(vec![2, 3]), p).unwrap();
        assert_eq!(e.smoothing_loss().unwrap(), 0.0);
    }

    #[test]
    fn combined_on_constant_prediction_is_dice() {
        let y = t(&[2, 2], &[1.0, 0.0, 1.0, 1.0]);
        let pair = MaskPair::new(y, Tensor::full(vec![2, 2], 0.4)).unwrap();
        assert_eq!(pair.combined_loss(1.0).unwrap(), pair.dice_loss().unwrap());
        let empty = MaskPair::new(Tensor::zeros(vec![2, 2]), Tensor::zeros(vec![2, 2])).unwrap();
        assert_eq!(empty.combined_loss(1.0).unwrap(), 0.0);
    }

    #[test]
    fn adversarial_values_at_half() {
        let mut tape = Tape::new();
        let real = tape.constant(Tensor::full(vec![1, 1, 1, 1], 0.5));
        let fake = tape.constant(Tensor::full(vec![1, 1, 1, 1], 0.5));
        let one = discriminator_loss_batch(&mut tape, &AdversarialBatch { items: vec![(real, true)] }).unwrap();
        assert!((tape.value(one).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let one = discriminator_loss_batch(&mut tape, &AdversarialBatch { items: vec![(fake, false)] }).unwrap();
        assert!((tape.value(one).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let g = generator_adversarial_loss(&mut tape, fake, AdversarialForm::NonSaturating).unwrap();
        assert!((tape.value(g).item().unwrap() - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn adversarial_losses_approach_zero_at_optimum() {
        let mut tape = Tape::new();
        let real = tape.constant(Tensor::full(vec![1, 1, 2, 2], 1.0 - 1e-9));
        let fake = tape.constant(Tensor::full(vec![1, 1, 2, 2], 1e-9));
        let d = discriminator_loss(&mut tape, real, fake).unwrap();
        let v = tape.value(d).item().unwrap();
        assert!(v > 0.0 && v < 1e-6);
        let g = generator_adversarial_loss(&mut tape, real, AdversarialForm::NonSaturating).unwrap();
        assert!(tape.value(g).item().unwrap() < 1e-6);
    }

    #[test]
    fn out_of_range_patch_is_domain_error() {
        let mut tape = Tape::new();
        let bad = tape.constant(Tensor::full(vec![1, 1, 1, 1], 1.5));
        assert!(matches!(
            generator_adversarial_loss(&mut tape, bad, AdversarialForm::NonSaturating),
            Err(Error::DomainError(_))
        ));
    }
}

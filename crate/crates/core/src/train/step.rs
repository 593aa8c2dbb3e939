//! One round of the two-player game: discriminator update on detached
//! generator masks, then generator update through a fresh discriminator pass.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::losses::{combined_loss_parts, discriminator_loss, generator_adversarial_loss};
use crate::models::{ModelGraph, ModelSpec};
use crate::nn::{Bindings, Forward, Mode};
use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::train::{adam_step, sgd_poly_step, OptimState, Precision, TrainConfig};

/// Both players with their optimizer states.
pub struct GanState {
    pub g: ModelGraph,
    pub d: ModelGraph,
    pub g_opt: OptimState,
    pub d_opt: OptimState,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub dice: f64,
    pub smoothing: f64,
    pub combined: f64,
    /// Generator adversarial term; 0 when λ_adv is 0.
    pub adversarial: f64,
    pub discriminator: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub g_ms: f64,
    pub d_ms: f64,
}

fn loss_guard(component: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(what) => Error::NonFiniteLoss(format!("{component}: {what}")),
        other => other,
    }
}

fn scalar(tape: &Tape, v: Var, component: &str) -> Result<f64> {
    let x = tape.value(v).item()?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFiniteLoss(component.to_string()))
    }
}

fn weight_grads(b: &Bindings, grads: &mut Gradients) -> Vec<(crate::nn::ParamId, Tensor)> {
    b.weights
        .iter()
        .filter_map(|&(id, v)| grads.take(v).map(|g| (id, g)))
        .collect()
}

/// Discriminator input for a mask batch: the mask alone, or mask and image
/// stacked on the channel axis.
fn d_input(tape: &mut Tape, d: &ModelGraph, mask: Var, image: Var) -> Result<Var> {
    match d.spec() {
        ModelSpec::Discriminator(c) if c.in_channels == 4 => tape.concat(&[mask, image], 1),
        _ => Ok(mask),
    }
}

fn discriminator_update(
    state: &mut GanState,
    images: &Tensor,
    masks: &Tensor,
    fake: &Tensor,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let image = tape.constant(images.clone());
    let real = tape.constant(masks.clone());
    let fake = tape.constant(fake.clone());
    let real_in = d_input(&mut tape, &state.d, real, image)?;
    let fake_in = d_input(&mut tape, &state.d, fake, image)?;
    let mut f = Forward::new(&mut tape, &state.d.store, Mode::Train, true);
    let d_real = state.d.forward(&mut f, real_in)?;
    let d_fake = state.d.forward(&mut f, fake_in)?;
    let bound = f.finish();
    let loss = discriminator_loss(&mut tape, d_real, d_fake).map_err(loss_guard("discriminator"))?;
    let value = scalar(&tape, loss, "discriminator")?;
    let mut grads = tape.backward(loss)?;
    let grads = weight_grads(&bound, &mut grads);
    let lr = sgd_poly_step(&mut state.d_opt, &mut state.d.store, &grads)?;
    state.d.store.apply_buffer_updates(bound.buffer_updates);
    if cfg.precision == Precision::F32 {
        state.d.store.round_to_f32();
        state.d_opt.round_to_f32();
    }
    Ok((value, lr))
}

/// Boundaries inside one [`gan_step`] round, reported to an observer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    BeforeDiscriminator,
    AfterDiscriminator,
    AfterGenerator,
}

/// `g_steps` rounds of: `d_steps` discriminator updates, then one generator update.
pub fn gan_step(state: &mut GanState, images: &Tensor, masks: &Tensor, cfg: &TrainConfig) -> Result<StepReport> {
    gan_step_observed(state, images, masks, cfg, |_, _| {})
}

/// [`gan_step`], calling `observe` with the state at each phase boundary.
pub fn gan_step_observed(
    state: &mut GanState,
    images: &Tensor,
    masks: &Tensor,
    cfg: &TrainConfig,
    mut observe: impl FnMut(Phase, &GanState),
) -> Result<StepReport> {
    if images.shape().first().copied().unwrap_or(0) == 0 {
        return Err(Error::InvalidSpec("empty batch".into()));
    }
    let mut report = StepReport::default();
    for _ in 0..cfg.g_steps {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let y = tape.constant(masks.clone());
        let mut f = Forward::new(&mut tape, &state.g.store, Mode::Train, true);
        let pred = state.g.forward(&mut f, x)?;
        let g_bound = f.finish();
        let mut g_ms = t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let fake = tape.value(pred).clone();
        observe(Phase::BeforeDiscriminator, state);
        for _ in 0..cfg.d_steps {
            let (d_loss, lr_d) = discriminator_update(state, images, masks, &fake, cfg)?;
            report.discriminator = d_loss;
            report.lr_d = lr_d;
        }
        report.d_ms += t1.elapsed().as_secs_f64() * 1e3;
        observe(Phase::AfterDiscriminator, state);

        let t2 = Instant::now();
        let (parts, combined) =
            combined_loss_parts(&mut tape, pred, y, cfg.smoothing_weight).map_err(loss_guard("combined"))?;
        report.dice = scalar(&tape, parts.dice, "dice")?;
        report.smoothing = scalar(&tape, parts.smoothing, "smoothing")?;
        report.combined = scalar(&tape, combined, "combined")?;
        let total = if cfg.lambda_adv > 0.0 {
            let d_in = d_input(&mut tape, &state.d, pred, x)?;
            let mut fd = Forward::new(&mut tape, &state.d.store, Mode::Train, false);
            let d_fake = state.d.forward(&mut fd, d_in)?;
            fd.finish();
            let adv =
                generator_adversarial_loss(&mut tape, d_fake, cfg.adversarial_form).map_err(loss_guard("adversarial"))?;
            report.adversarial = scalar(&tape, adv, "adversarial")?;
            let weighted = tape.scale(adv, cfg.lambda_adv)?;
            tape.add(combined, weighted).map_err(loss_guard("generator total"))?
        } else {
            report.adversarial = 0.0;
            combined
        };
        scalar(&tape, total, "generator total")?;
        let mut grads = tape.backward(total)?;
        let grads = weight_grads(&g_bound, &mut grads);
        report.lr_g = adam_step(&mut state.g_opt, &mut state.g.store, &grads)?;
        state.g.store.apply_buffer_updates(g_bound.buffer_updates);
        if cfg.precision == Precision::F32 {
            state.g.store.round_to_f32();
            state.g_opt.round_to_f32();
        }
        g_ms += t2.elapsed().as_secs_f64() * 1e3;
        report.g_ms += g_ms;
        observe(Phase::AfterGenerator, state);
    }
    Ok(report)
}

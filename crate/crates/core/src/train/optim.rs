//! Adam with step decay and SGD with polynomial decay over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamRole, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimConfig {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        /// Multiply the rate by `decay_factor` every `decay_every_epochs`.
        decay_factor: f64,
        decay_every_epochs: usize,
    },
    Sgd {
        lr: f64,
        power: f64,
    },
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        OptimConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_factor: 0.2,
            decay_every_epochs: 25,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimConfig::Sgd { lr, power: 0.9 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant,
    /// `lr·factor^⌊t/period⌋`.
    StepDecay { factor: f64, period: usize },
    /// `lr·(1 − t/max_steps)^power`, defined for `t < max_steps`.
    Poly { power: f64, max_steps: usize },
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub kind: OptimKind,
    pub base_lr: f64,
    pub schedule: Schedule,
    /// Number of updates applied so far.
    pub step: usize,
    /// First and second moments per parameter (empty for SGD and buffers).
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl OptimState {
    pub fn new(kind: OptimKind, base_lr: f64, schedule: Schedule, store: &ParamStore) -> Self {
        let moments = store
            .iter()
            .map(|(_, p)| {
                (matches!(kind, OptimKind::Adam { .. }) && p.role == ParamRole::Weight)
                    .then(|| (Tensor::zeros(p.value.shape().to_vec()), Tensor::zeros(p.value.shape().to_vec())))
            })
            .collect();
        Self {
            kind,
            base_lr,
            schedule,
            step: 0,
            moments,
        }
    }

    /// Build from a config; `steps_per_epoch` converts epoch periods and
    /// `max_steps` bounds the polynomial schedule.
    pub fn from_config(cfg: &OptimConfig, store: &ParamStore, steps_per_epoch: usize, max_steps: usize) -> Self {
        match *cfg {
            OptimConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
                decay_factor,
                decay_every_epochs,
            } => {
                let schedule = if decay_every_epochs == 0 {
                    Schedule::Constant
                } else {
                    Schedule::StepDecay {
                        factor: decay_factor,
                        period: (decay_every_epochs * steps_per_epoch).max(1),
                    }
                };
                Self::new(OptimKind::Adam { beta1, beta2, eps }, lr, schedule, store)
            }
            OptimConfig::Sgd { lr, power } => Self::new(OptimKind::Sgd, lr, Schedule::Poly { power, max_steps }, store),
        }
    }

    /// Learning rate for update number `t` (0-based).
    pub fn lr_at(&self, t: usize) -> Result<f64> {
        Ok(match self.schedule {
            Schedule::Constant => self.base_lr,
            Schedule::StepDecay { factor, period } => self.base_lr * factor.powi((t / period) as i32),
            Schedule::Poly { power, max_steps } => {
                if t >= max_steps {
                    return Err(Error::StepOverflow { step: t, max_steps });
                }
                self.base_lr * (1.0 - t as f64 / max_steps as f64).powf(power)
            }
        })
    }

    pub fn lr(&self) -> Result<f64> {
        self.lr_at(self.step)
    }

    pub fn moments(&self, id: ParamId) -> Option<&(Tensor, Tensor)> {
        self.moments.get(id.0).and_then(Option::as_ref)
    }

    pub fn moments_mut(&mut self) -> impl Iterator<Item = (usize, &mut (Tensor, Tensor))> {
        self.moments.iter_mut().enumerate().filter_map(|(i, m)| m.as_mut().map(|m| (i, m)))
    }

    pub fn round_to_f32(&mut self) {
        for (_, (m, v)) in self.moments_mut() {
            m.round_to_f32();
            v.round_to_f32();
        }
    }
}

fn check_grads(store: &ParamStore, grads: &[(ParamId, Tensor)]) -> Result<()> {
    for (id, g) in grads {
        let p = store.get(*id);
        if g.shape() != p.value.shape() {
            return Err(Error::shape(format!("gradient for {} has shape {:?}", p.name, g.shape())));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update; returns the learning rate used.
pub fn adam_step(state: &mut OptimState, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<f64> {
    let OptimKind::Adam { beta1, beta2, eps } = state.kind else {
        return Err(Error::Config("adam_step on a non-Adam state".into()));
    };
    check_grads(store, grads)?;
    let lr = state.lr()?;
    let t = (state.step + 1) as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    for (id, g) in grads {
        let (m, v) = state.moments[id.0]
            .as_mut()
            .ok_or_else(|| Error::Config(format!("no moments for {}", store.get(*id).name)))?;
        let p = store.value_mut(*id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(lr)
}

/// One plain gradient-descent update under the polynomial schedule.
pub fn sgd_poly_step(state: &mut OptimState, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<f64> {
    check_grads(store, grads)?;
    let lr = state.lr()?;
    for (id, g) in grads {
        for (p, &g) in store.value_mut(*id).data_mut().iter_mut().zip(g.data()) {
            *p -= lr * g;
        }
    }
    state.step += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", Tensor::scalar(v), ParamRole::Weight);
        (s, id)
    }

    fn adam(store: &ParamStore) -> OptimState {
        OptimState::new(
            OptimKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            1e-3,
            Schedule::Constant,
            store,
        )
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let (mut s, id) = one_param(0.7);
        let mut st = adam(&s);
        adam_step(&mut st, &mut s, &[(id, Tensor::scalar(0.0))]).unwrap();
        assert_eq!(s.value(id).data()[0], 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, id) = one_param(0.0);
        let mut st = adam(&s);
        adam_step(&mut st, &mut s, &[(id, Tensor::scalar(1.0))]).unwrap();
        assert!((s.value(id).data()[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_is_deterministic_over_a_hundred_steps() {
        let run = || {
            let (mut s, id) = one_param(0.3);
            let mut st = adam(&s);
            for i in 0..100 {
                let g = (s.value(id).data()[0] - 1.0) * (1.0 + (i % 3) as f64);
                adam_step(&mut st, &mut s, &[(id, Tensor::scalar(g))]).unwrap();
            }
            s.value(id).data()[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let (mut s, id) = one_param(0.0);
        let mut st = adam(&s);
        let err = adam_step(&mut st, &mut s, &[(id, Tensor::scalar(f64::NAN))]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(n) if n == "x"));
    }

    #[test]
    fn poly_schedule_values() {
        let (s, _) = one_param(0.0);
        let st = OptimState::new(OptimKind::Sgd, 1.0, Schedule::Poly { power: 0.9, max_steps: 100 }, &s);
        assert_eq!(st.lr_at(0).unwrap(), 1.0);
        assert!((st.lr_at(50).unwrap() - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((st.lr_at(50).unwrap() - 0.53589).abs() < 1e-5);
        assert!(matches!(st.lr_at(100), Err(Error::StepOverflow { step: 100, max_steps: 100 })));
        let mut prev = f64::INFINITY;
        for t in 0..100 {
            let lr = st.lr_at(t).unwrap();
            assert!(lr > 0.0 && lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn sgd_zero_gradient_leaves_params() {
        let (mut s, id) = one_param(2.5);
        let mut st = OptimState::new(OptimKind::Sgd, 0.1, Schedule::Poly { power: 0.9, max_steps: 10 }, &s);
        sgd_poly_step(&mut st, &mut s, &[(id, Tensor::scalar(0.0))]).unwrap();
        assert_eq!(s.value(id).data()[0], 2.5);
        sgd_poly_step(&mut st, &mut s, &[(id, Tensor::scalar(1.0))]).unwrap();
        assert!(s.value(id).data()[0] < 2.5);
    }

    #[test]
    fn step_decay_is_non_increasing() {
        let (s, _) = one_param(0.0);
        let st = OptimState::new(OptimKind::Sgd, 1e-3, Schedule::StepDecay { factor: 0.2, period: 25 }, &s);
        assert_eq!(st.lr_at(24).unwrap(), 1e-3);
        assert!((st.lr_at(25).unwrap() - 2e-4).abs() < 1e-18);
    }
}

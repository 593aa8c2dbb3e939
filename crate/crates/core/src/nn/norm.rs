//! Batch normalization over the channel axis of NCHW tensors.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Per-channel batch statistics of a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

fn check(tape: &Tape, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    if tape.shape(gamma) != [c] || tape.shape(beta) != [c] {
        return Err(Error::shape(format!(
            "batch norm affine {:?}/{:?} for {c} channels",
            tape.shape(gamma),
            tape.shape(beta)
        )));
    }
    Ok((n, c, h * w))
}

impl Tape {
    /// Normalize with the batch's own statistics, then apply `gamma`/`beta`.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, hw) = check(self, x, gamma, beta)?;
        let xd = self.value(x).data();
        let count = n * hw;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                s += xd[(b * c + ch) * hw..][..hw].iter().sum::<f64>();
            }
            let m = s / count as f64;
            let mut v = 0.0;
            for b in 0..n {
                v += xd[(b * c + ch) * hw..][..hw].iter().map(|x| (x - m) * (x - m)).sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = v / count as f64;
        }
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let (m, iv, g, be) = (mean[ch], inv[ch], gd[ch], bd[ch]);
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    out[i] = g * (xd[i] - m) * iv + be;
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let stats = BatchStats {
            mean: mean.clone(),
            var,
            count,
        };
        let v = self.record("batch_norm", Tensor::from_parts(shape, out), &[x, gamma, beta], move |ctx| {
            let xd = ctx.inputs[0].data();
            let gd = ctx.inputs[1].data();
            let g = ctx.grad.data();
            let mut dx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for ch in 0..c {
                let (m, iv) = (mean[ch], inv[ch]);
                let (mut sg, mut sgx) = (0.0, 0.0);
                for b in 0..n {
                    let o = (b * c + ch) * hw;
                    for i in o..o + hw {
                        sg += g[i];
                        sgx += g[i] * (xd[i] - m) * iv;
                    }
                }
                dgamma[ch] = sgx;
                dbeta[ch] = sg;
                if let Some(dx) = dx.as_deref_mut() {
                    let k = gd[ch] * iv / count as f64;
                    for b in 0..n {
                        let o = (b * c + ch) * hw;
                        for i in o..o + hw {
                            let xh = (xd[i] - m) * iv;
                            dx[i] = k * (count as f64 * g[i] - sg - xh * sgx);
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        })?;
        Ok((v, stats))
    }

    /// Normalize with fixed statistics (inference mode).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let (n, c, hw) = check(self, x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("running statistics length"));
        }
        if var.iter().any(|v| *v < 0.0) {
            return Err(Error::DomainError("negative running variance".into()));
        }
        let mean = mean.to_vec();
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let xd = self.value(x).data();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    out[i] = gd[ch] * (xd[i] - mean[ch]) * inv[ch] + bd[ch];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        self.record("batch_norm_eval", Tensor::from_parts(shape, out), &[x, gamma, beta], move |ctx| {
            let xd = ctx.inputs[0].data();
            let gd = ctx.inputs[1].data();
            let g = ctx.grad.data();
            let mut dx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for b in 0..n {
                for ch in 0..c {
                    let o = (b * c + ch) * hw;
                    for i in o..o + hw {
                        dgamma[ch] += g[i] * (xd[i] - mean[ch]) * inv[ch];
                        dbeta[ch] += g[i];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[i] = g[i] * gd[ch] * inv[ch];
                        }
                    }
                }
            }
            vec![
                dx.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                ctx.needs[1].then(|| Tensor::from_parts(vec![c], dgamma)),
                ctx.needs[2].then(|| Tensor::from_parts(vec![c], dbeta)),
            ]
        })
    }
}

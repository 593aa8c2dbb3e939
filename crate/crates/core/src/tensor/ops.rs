//! Elementwise arithmetic, activations, reductions and shape plumbing.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Abs,
    Log,
    Neg,
    Sigmoid,
    Swish,
    Relu,
    LeakyRelu(f64),
    Clamp(f64, f64),
    Scale(f64),
    Shift(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    fn label(self) -> &'static str {
        match self {
            Unary::Abs => "abs",
            Unary::Log => "log",
            Unary::Neg => "neg",
            Unary::Sigmoid => "sigmoid",
            Unary::Swish => "swish",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Clamp(..) => "clamp",
            Unary::Scale(_) => "scale",
            Unary::Shift(_) => "shift",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Abs => x.abs(),
            Unary::Log => x.ln(),
            Unary::Neg => -x,
            Unary::Sigmoid => sigmoid(x),
            Unary::Swish => x * sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(s) => {
                if x >= 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
            Unary::Scale(c) => c * x,
            Unary::Shift(c) => x + c,
        }
    }

    /// Local derivative. At a kink the right-hand (positive) branch is used,
    /// except for `abs` whose derivative at zero is taken as zero.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Log => 1.0 / x,
            Unary::Neg => -1.0,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Unary::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(s) => {
                if x >= 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Clamp(lo, hi) => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Scale(c) => c,
            Unary::Shift(_) => 1.0,
        }
    }

    fn kink_distance(self, x: f64) -> Option<f64> {
        match self {
            Unary::Abs | Unary::Relu | Unary::LeakyRelu(_) => Some(x.abs()),
            Unary::Clamp(lo, hi) => Some((x - lo).abs().min((x - hi).abs())),
            _ => None,
        }
    }
}

/// Broadcast shape under trailing-dimension alignment.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}"))),
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of the broadcast source.
fn broadcast_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n: usize = out.iter().product();
    let src_len: usize = src.iter().product();
    if src_len == 1 {
        return vec![0; n];
    }
    let rank = out.len();
    let offset = rank - src.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + offset] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut pos = 0usize;
    for _ in 0..n {
        map.push(pos);
        for d in (0..rank).rev() {
            idx[d] += 1;
            pos += strides[d];
            if idx[d] < out[d] {
                break;
            }
            pos -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

/// Sum a gradient shaped like `out` down to `src` via a broadcast map.
fn reduce_to(grad: &[f64], map: Option<&[usize]>, src: &[usize], local: impl Fn(usize) -> f64) -> Tensor {
    match map {
        None => Tensor::from_parts(
            src.to_vec(),
            grad.iter().enumerate().map(|(i, g)| g * local(i)).collect(),
        ),
        Some(map) => {
            let mut acc = vec![0.0; src.iter().product()];
            for (i, (&g, &m)) in grad.iter().zip(map).enumerate() {
                acc[m] += g * local(i);
            }
            Tensor::from_parts(src.to_vec(), acc)
        }
    }
}

impl Tape {
    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if kind == Unary::Log {
            if let Some(bad) = xv.data().iter().find(|v| **v <= 0.0) {
                return Err(Error::DomainError(format!("log of non-positive value {bad}")));
            }
        }
        let margin = xv.data().iter().filter_map(|&v| kind.kink_distance(v)).reduce(f64::min);
        let out = xv.map(|v| kind.apply(v));
        if let Some(m) = margin {
            self.note_kink_margin(m);
        }
        self.record(kind.label(), out, &[x], move |ctx| {
            let x = ctx.inputs[0].data();
            let y = ctx.output.data();
            let g = ctx.grad.data();
            let d = (0..g.len()).map(|i| g[i] * kind.derivative(x[i], y[i])).collect();
            vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), d))]
        })
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(av.shape(), bv.shape())?;
        if kind == Binary::Div && bv.data().contains(&0.0) {
            return Err(Error::DomainError("division by zero".into()));
        }
        let a_map = (av.shape() != out_shape.as_slice()).then(|| broadcast_map(av.shape(), &out_shape));
        let b_map = (bv.shape() != out_shape.as_slice()).then(|| broadcast_map(bv.shape(), &out_shape));
        let n: usize = out_shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let ai = |i: usize| a_map.as_ref().map_or(i, |m| m[i]);
        let bi = |i: usize| b_map.as_ref().map_or(i, |m| m[i]);
        let op = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f64> = if a_map.is_none() && b_map.is_none() {
            ad.iter().zip(bd).map(|(&x, &y)| op(x, y)).collect()
        } else {
            (0..n).map(|i| op(ad[ai(i)], bd[bi(i)])).collect()
        };
        let label = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        self.record(label, Tensor::from_parts(out_shape, data), &[a, b], move |ctx| {
            let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
            let (ad, bd) = (a.data(), b.data());
            let g = ctx.grad.data();
            let ai = |i: usize| a_map.as_ref().map_or(i, |m| m[i]);
            let bi = |i: usize| b_map.as_ref().map_or(i, |m| m[i]);
            let ga = ctx.needs[0].then(|| {
                reduce_to(g, a_map.as_deref(), a.shape(), |i| match kind {
                    Binary::Add | Binary::Sub => 1.0,
                    Binary::Mul => bd[bi(i)],
                    Binary::Div => 1.0 / bd[bi(i)],
                })
            });
            let gb = ctx.needs[1].then(|| {
                reduce_to(g, b_map.as_deref(), b.shape(), |i| match kind {
                    Binary::Add => 1.0,
                    Binary::Sub => -1.0,
                    Binary::Mul => ad[ai(i)],
                    Binary::Div => {
                        let y = bd[bi(i)];
                        -ad[ai(i)] / (y * y)
                    }
                })
            });
            vec![ga, gb]
        })
    }

    /// Elementwise op: unary kinds take `b = None`, binary kinds require it.
    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (Elementwise::Unary(u), None) => self.unary(u, a),
            (Elementwise::Binary(k), Some(b)) => self.binary(k, a, b),
            (Elementwise::Unary(_), Some(_)) => Err(Error::shape("unary op given two operands")),
            (Elementwise::Binary(_), None) => Err(Error::shape("binary op given one operand")),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Swish, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }
    pub fn relu6(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Clamp(0.0, 6.0), x)
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), x)
    }

    /// Reduce over `axes`, dropping them. Reducing every axis yields shape `[1]`.
    pub fn reduce(&mut self, kind: Reduce, x: Var, axes: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let rank = shape.len();
        let mut reduced = vec![false; rank];
        for &a in axes {
            if a >= rank {
                return Err(Error::InvalidAxis { axis: a, rank });
            }
            reduced[a] = true;
        }
        let mut out_shape: Vec<usize> = (0..rank).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        // Output flat index for each input flat index.
        let keep: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .map(|(&d, &r)| if r { 1 } else { d })
            .collect();
        let map = broadcast_map(&keep, &shape);
        let n_out: usize = out_shape.iter().product();
        let count = (xv.len() / n_out) as f64;
        let data = xv.data();
        let (out, argmax) = match kind {
            Reduce::Sum | Reduce::Mean => {
                let mut acc = vec![0.0; n_out];
                for (v, &m) in data.iter().zip(&map) {
                    acc[m] += v;
                }
                if kind == Reduce::Mean {
                    acc.iter_mut().for_each(|v| *v /= count);
                }
                (acc, None)
            }
            Reduce::Max => {
                let mut acc = vec![f64::NEG_INFINITY; n_out];
                let mut arg = vec![0usize; n_out];
                for (i, (&v, &m)) in data.iter().zip(&map).enumerate() {
                    if v > acc[m] {
                        acc[m] = v;
                        arg[m] = i;
                    }
                }
                let mut gap = f64::INFINITY;
                for (i, (&v, &m)) in data.iter().zip(&map).enumerate() {
                    if i != arg[m] {
                        gap = gap.min(acc[m] - v);
                    }
                }
                (acc, Some((arg, gap)))
            }
        };
        let argmax = argmax.map(|(arg, gap)| {
            if gap.is_finite() {
                self.note_kink_margin(gap);
            }
            arg
        });
        let label = match kind {
            Reduce::Sum => "sum",
            Reduce::Mean => "mean",
            Reduce::Max => "max",
        };
        self.record(label, Tensor::from_parts(out_shape, out), &[x], move |ctx| {
            let g = ctx.grad.data();
            let in_shape = ctx.inputs[0].shape().to_vec();
            let gx = match &argmax {
                None => {
                    let s = if kind == Reduce::Mean { 1.0 / count } else { 1.0 };
                    Tensor::from_parts(in_shape, map.iter().map(|&m| g[m] * s).collect())
                }
                Some(arg) => {
                    let mut d = vec![0.0; ctx.inputs[0].len()];
                    for (o, &i) in arg.iter().enumerate() {
                        d[i] += g[o];
                    }
                    Tensor::from_parts(in_shape, d)
                }
            };
            vec![Some(gx)]
        })
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce(Reduce::Sum, x, &axes)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        self.reduce(Reduce::Mean, x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.record("reshape", out, &[x], |ctx| {
            vec![Some(Tensor::from_parts(
                ctx.inputs[0].shape().to_vec(),
                ctx.grad.data().to_vec(),
            ))]
        })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::shape("concat of nothing"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidAxis { axis, rank: first.len() });
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::shape(format!("concat {s:?} with {first:?} on axis {axis}")));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let d = self.value(p).data();
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        self.record("concat", Tensor::from_parts(shape, out), parts, move |ctx| {
            let g = ctx.grad.data();
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|s| Vec::with_capacity(outer * s * inner)).collect();
            let mut off = 0;
            for _ in 0..outer {
                for (k, &sz) in sizes.iter().enumerate() {
                    grads[k].extend_from_slice(&g[off..off + sz * inner]);
                    off += sz * inner;
                }
            }
            grads
                .into_iter()
                .zip(ctx.inputs)
                .zip(ctx.needs)
                .map(|((d, x), &need)| need.then(|| Tensor::from_parts(x.shape().to_vec(), d)))
                .collect()
        })
    }
}

/// Unified elementwise operator selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Unary(Unary),
    Binary(Binary),
}

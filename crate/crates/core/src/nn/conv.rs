//! 2-D convolution over NCHW tensors: dense, grouped, depthwise and dilated.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding giving `ceil(in / stride)` outputs; an odd total pad puts
    /// the extra pixel on the bottom/right.
    Same,
    Valid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square `k`×`k` kernel, stride 1, same padding, with bias.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::Same,
            groups: 1,
            bias: true,
        }
    }

    /// One filter per channel.
    pub fn depthwise(channels: usize, k: usize) -> Self {
        Self {
            groups: channels,
            ..Self::new(channels, channels, k)
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self
    }

    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, b: bool) -> Self {
        self.bias = b;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.groups > 0
            && self.in_channels % self.groups == 0
            && self.out_channels % self.groups == 0
            && self.kernel.0 > 0
            && self.kernel.1 > 0
            && self.stride.0 > 0
            && self.stride.1 > 0
            && self.dilation.0 > 0
            && self.dilation.1 > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("{self:?}")))
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels / self.groups * self.kernel.0 * self.kernel.1
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product::<usize>() + if self.bias { self.out_channels } else { 0 }
    }

    /// Output extent and leading pad along one axis.
    fn axis(&self, input: usize, k: usize, s: usize, d: usize) -> Result<(usize, usize)> {
        let eff = d * (k - 1) + 1;
        match self.padding {
            Padding::Same => {
                let out = input.div_ceil(s);
                let total = ((out - 1) * s + eff).saturating_sub(input);
                Ok((out, total / 2))
            }
            Padding::Valid => {
                if input < eff {
                    return Err(Error::EmptyOutput(format!(
                        "input extent {input} below effective kernel {eff}"
                    )));
                }
                Ok(((input - eff) / s + 1, 0))
            }
        }
    }

    /// Spatial output extent for an `h`×`w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ho, _) = self.axis(h, self.kernel.0, self.stride.0, self.dilation.0)?;
        let (wo, _) = self.axis(w, self.kernel.1, self.stride.1, self.dilation.1)?;
        Ok((ho, wo))
    }

    pub(crate) fn geometry(&self, n: usize, h: usize, w: usize) -> Result<Geometry> {
        let (ho, pad_t) = self.axis(h, self.kernel.0, self.stride.0, self.dilation.0)?;
        let (wo, pad_l) = self.axis(w, self.kernel.1, self.stride.1, self.dilation.1)?;
        Ok(Geometry {
            n,
            cin: self.in_channels,
            cout: self.out_channels,
            h,
            w,
            ho,
            wo,
            kh: self.kernel.0,
            kw: self.kernel.1,
            sh: self.stride.0,
            sw: self.stride.1,
            dh: self.dilation.0,
            dw: self.dilation.1,
            pad_t,
            pad_l,
            groups: self.groups,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
    pad_t: usize,
    pad_l: usize,
    groups: usize,
}

/// `c = a·b + beta·c` for row-major-strided views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(m * n <= c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Geometry {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn hw_out(&self) -> usize {
        self.ho * self.wo
    }
    fn is_pointwise_identity(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pad_t == 0 && self.pad_l == 0
    }
    fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.cin && self.groups == self.cout
    }

    /// Range of output columns whose tap `kx` lands inside the input row.
    fn ox_range(&self, kx: usize) -> (usize, usize, isize) {
        let off = (kx * self.dw) as isize - self.pad_l as isize;
        let sw = self.sw as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + sw - 1) / sw };
        let hi = (self.w as isize - 1 - off).div_euclid(sw) + 1;
        let hi = hi.clamp(0, self.wo as isize);
        (lo.min(hi) as usize, hi as usize, off)
    }

    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.sh + ky * self.dh) as isize - self.pad_t as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    /// Unfold one group of one image (`cin_g` channels) into `[K, ho*wo]`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let hw = self.hw_out();
        for ci in 0..self.cin_g() {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    dst.fill(0.0);
                    let (lo, hi, off) = self.ox_range(kx);
                    for oy in 0..self.ho {
                        let Some(iy) = self.iy(oy, ky) else { continue };
                        let src = &plane[iy * self.w..(iy + 1) * self.w];
                        let d = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        for ox in lo..hi {
                            d[ox] = src[(ox as isize * self.sw as isize + off) as usize];
                        }
                    }
                }
            }
        }
    }

    /// Inverse of [`im2col`]: accumulate columns back into one group's planes.
    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let hw = self.hw_out();
        for ci in 0..self.cin_g() {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let (lo, hi, off) = self.ox_range(kx);
                    for oy in 0..self.ho {
                        let Some(iy) = self.iy(oy, ky) else { continue };
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        let s = &src[oy * self.wo..(oy + 1) * self.wo];
                        for ox in lo..hi {
                            dst[(ox as isize * self.sw as isize + off) as usize] += s[ox];
                        }
                    }
                }
            }
        }
    }

    fn forward(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let hw = self.hw_out();
        let mut out = vec![0.0; self.n * self.cout * hw];
        if self.is_depthwise() {
            self.depthwise_forward(x, w, &mut out);
        } else {
            let (k, cin_g, cout_g) = (self.k(), self.cin_g(), self.cout_g());
            let mut cols = vec![0.0; if self.is_pointwise_identity() { 0 } else { k * hw }];
            for b in 0..self.n {
                for g in 0..self.groups {
                    let xs = &x[(b * self.cin + g * cin_g) * self.h * self.w..][..cin_g * self.h * self.w];
                    let src: &[f64] = if self.is_pointwise_identity() {
                        xs
                    } else {
                        self.im2col(xs, &mut cols);
                        &cols
                    };
                    let wg = &w[g * cout_g * k..(g + 1) * cout_g * k];
                    let o = &mut out[(b * self.cout + g * cout_g) * hw..][..cout_g * hw];
                    gemm(cout_g, k, hw, wg, (k, 1), src, (hw, 1), 0.0, o);
                }
            }
        }
        if let Some(bias) = bias {
            for plane in out.chunks_mut(hw).enumerate() {
                let (i, plane) = plane;
                let bv = bias[i % self.cout];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
        out
    }

    fn depthwise_forward(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        let (hw_in, hw) = (self.h * self.w, self.hw_out());
        let sw = self.sw as isize;
        for b in 0..self.n {
            for c in 0..self.cin {
                let xp = &x[(b * self.cin + c) * hw_in..][..hw_in];
                let op = &mut out[(b * self.cout + c) * hw..][..hw];
                let wk = &w[c * self.kh * self.kw..(c + 1) * self.kh * self.kw];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = wk[ky * self.kw + kx];
                        let (lo, hi, off) = self.ox_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..self.ho {
                            let Some(iy) = self.iy(oy, ky) else { continue };
                            let row = &xp[iy * self.w..(iy + 1) * self.w];
                            let o = &mut op[oy * self.wo..(oy + 1) * self.wo];
                            if sw == 1 {
                                let s = (lo as isize + off) as usize;
                                for (ov, xv) in o[lo..hi].iter_mut().zip(&row[s..s + (hi - lo)]) {
                                    *ov += wv * xv;
                                }
                            } else {
                                for ox in lo..hi {
                                    o[ox] += wv * row[(ox as isize * sw + off) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn depthwise_backward(&self, x: &[f64], w: &[f64], g: &[f64], dx: Option<&mut [f64]>, dw: Option<&mut [f64]>) {
        let (hw_in, hw) = (self.h * self.w, self.hw_out());
        let sw = self.sw as isize;
        let kk = self.kh * self.kw;
        let mut dx = dx;
        let mut dw = dw;
        for b in 0..self.n {
            for c in 0..self.cin {
                let xp = &x[(b * self.cin + c) * hw_in..][..hw_in];
                let gp = &g[(b * self.cout + c) * hw..][..hw];
                let mut dxp = dx.as_deref_mut().map(|d| &mut d[(b * self.cin + c) * hw_in..][..hw_in]);
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wv = w[c * kk + ky * self.kw + kx];
                        let (lo, hi, off) = self.ox_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in 0..self.ho {
                            let Some(iy) = self.iy(oy, ky) else { continue };
                            let go = &gp[oy * self.wo..][lo..hi];
                            let row = iy * self.w;
                            if sw == 1 {
                                let s = row + (lo as isize + off) as usize;
                                let xr = &xp[s..s + (hi - lo)];
                                acc += go.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                                if let Some(d) = dxp.as_deref_mut() {
                                    for (dv, gv) in d[s..s + (hi - lo)].iter_mut().zip(go) {
                                        *dv += wv * gv;
                                    }
                                }
                            } else {
                                for (i, gv) in go.iter().enumerate() {
                                    let ix = row + (((lo + i) as isize) * sw + off) as usize;
                                    acc += gv * xp[ix];
                                    if let Some(d) = dxp.as_deref_mut() {
                                        d[ix] += wv * gv;
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_deref_mut() {
                            dw[c * kk + ky * self.kw + kx] += acc;
                        }
                    }
                }
            }
        }
    }

    fn backward(
        &self,
        x: &[f64],
        w: &[f64],
        g: &[f64],
        need_x: bool,
        need_w: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let mut dx = need_x.then(|| vec![0.0; x.len()]);
        let mut dw = need_w.then(|| vec![0.0; w.len()]);
        if self.is_depthwise() {
            self.depthwise_backward(x, w, g, dx.as_deref_mut(), dw.as_deref_mut());
            return (dx, dw);
        }
        let hw = self.hw_out();
        let (k, cin_g, cout_g) = (self.k(), self.cin_g(), self.cout_g());
        let identity = self.is_pointwise_identity();
        let mut cols = vec![0.0; if identity { 0 } else { k * hw }];
        let mut dcols = vec![0.0; if identity { 0 } else { k * hw }];
        for b in 0..self.n {
            for gi in 0..self.groups {
                let xoff = (b * self.cin + gi * cin_g) * self.h * self.w;
                let xs = &x[xoff..][..cin_g * self.h * self.w];
                let go = &g[(b * self.cout + gi * cout_g) * hw..][..cout_g * hw];
                let wg = &w[gi * cout_g * k..(gi + 1) * cout_g * k];
                if let Some(dw) = dw.as_deref_mut() {
                    let src: &[f64] = if identity {
                        xs
                    } else {
                        self.im2col(xs, &mut cols);
                        &cols
                    };
                    // dW[cout_g, K] += G[cout_g, hw] · colsᵀ[hw, K]
                    gemm(cout_g, hw, k, go, (hw, 1), src, (1, hw), 1.0, &mut dw[gi * cout_g * k..(gi + 1) * cout_g * k]);
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let dxs = &mut dx[xoff..][..cin_g * self.h * self.w];
                    if identity {
                        gemm(k, cout_g, hw, wg, (1, k), go, (hw, 1), 1.0, dxs);
                    } else {
                        gemm(k, cout_g, hw, wg, (1, k), go, (hw, 1), 0.0, &mut dcols);
                        self.col2im(&dcols, dxs);
                    }
                }
            }
        }
        (dx, dw)
    }
}

impl Tape {
    /// Convolve `x` (NCHW) with `weight` (`spec.weight_shape()`) plus an
    /// optional per-output-channel `bias`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        spec.validate()?;
        let (n, c, h, w) = self.value(x).dims4()?;
        if c != spec.in_channels {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                spec.in_channels
            )));
        }
        if self.shape(weight) != spec.weight_shape() {
            return Err(Error::shape(format!(
                "conv weight {:?} != {:?}",
                self.shape(weight),
                spec.weight_shape()
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [spec.out_channels] {
                return Err(Error::shape(format!("conv bias {:?}", self.shape(b))));
            }
        }
        let geo = spec.geometry(n, h, w)?;
        let out = geo.forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_parts(vec![n, spec.out_channels, geo.ho, geo.wo], out);
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.record("conv2d", value, &inputs, move |ctx| {
            let (xv, wv) = (ctx.inputs[0], ctx.inputs[1]);
            let g = ctx.grad.data();
            let (dx, dw) = geo.backward(xv.data(), wv.data(), g, ctx.needs[0], ctx.needs[1]);
            let mut grads = vec![
                dx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
                dw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
            ];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| {
                    let hw = geo.ho * geo.wo;
                    let mut db = vec![0.0; geo.cout];
                    for (i, plane) in g.chunks(hw).enumerate() {
                        db[i % geo.cout] += plane.iter().sum::<f64>();
                    }
                    Tensor::from_parts(vec![geo.cout], db)
                }));
            }
            grads
        })
    }
}

/// Receptive field of a stack of convolutions given as `(kernel, stride)`
/// pairs, via RF₀ = 1, RFₙ = RFₙ₋₁ + (kₙ − 1)·∏ᵢ₍ᵢ<ₙ₎ sᵢ.
pub fn receptive_field(layers: &[(usize, usize)]) -> usize {
    let mut rf = 1;
    let mut jump = 1;
    for &(k, s) in layers {
        rf += (k - 1) * jump;
        jump *= s;
    }
    rf
}

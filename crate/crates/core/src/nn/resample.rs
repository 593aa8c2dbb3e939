use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMode {
    /// Half-pixel-centre bilinear interpolation, edge-clamped.
    Bilinear,
    /// Source index `floor(dst * in / out)`.
    Nearest,
}

/// Per-axis interpolation taps: `(i0, i1, weight of i1)`.
fn axis_taps(input: usize, output: usize, mode: ResampleMode) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| match mode {
            ResampleMode::Nearest => {
                let i = ((o * input) / output).min(input - 1);
                (i, i, 0.0)
            }
            ResampleMode::Bilinear => {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(input - 1);
                let i1 = (i0 + 1).min(input - 1);
                let f = if i1 == i0 { 0.0 } else { src - i0 as f64 };
                (i0, i1, f)
            }
        })
        .collect()
}

impl Tape {
    /// Resize the spatial axes of an NCHW tensor to `(out_h, out_w)`.
    pub fn resample(&mut self, x: Var, mode: ResampleMode, (out_h, out_w): (usize, usize)) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidTarget(format!("{out_h}x{out_w}")));
        }
        let (n, c, h, w) = self.value(x).dims4()?;
        let ty = axis_taps(h, out_h, mode);
        let tx = axis_taps(w, out_w, mode);
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    // Lerp form keeps constant regions exactly constant.
                    let (a, b) = (src[y0 * w + x0], src[y0 * w + x1]);
                    let top = a + (b - a) * fx;
                    let (a, b) = (src[y1 * w + x0], src[y1 * w + x1]);
                    let bot = a + (b - a) * fx;
                    dst[oy * out_w + ox] = top + (bot - top) * fy;
                }
            }
        }
        let value = Tensor::from_parts(vec![n, c, out_h, out_w], out);
        self.record("resample", value, &[x], move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![0.0; n * c * h * w];
            for p in 0..n * c {
                let gs = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                let d = &mut dx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = gs[oy * out_w + ox];
                        d[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        d[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        d[y1 * w + x0] += gv * fy * (1.0 - fx);
                        d[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::from_parts(vec![n, c, h, w], dx))]
        })
    }

    /// Resize by an integer factor on both spatial axes.
    pub fn upsample(&mut self, x: Var, mode: ResampleMode, factor: usize) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        self.resample(x, mode, (h * factor, w * factor))
    }
}

//! Convolution against a naive direct-loop oracle.

use dermseg::nn::{ConvSpec, Padding};
use dermseg::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct quadruple loop with explicit same/valid padding arithmetic.
fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (dh, dw) = spec.dilation;
    let eff_h = dh * (kh - 1) + 1;
    let eff_w = dw * (kw - 1) + 1;
    let (ho, pt) = match spec.padding {
        Padding::Same => {
            let o = h.div_ceil(sh);
            (o, ((o - 1) * sh + eff_h).saturating_sub(h) / 2)
        }
        Padding::Valid => ((h - eff_h) / sh + 1, 0),
    };
    let (wo, pl) = match spec.padding {
        Padding::Same => {
            let o = wd.div_ceil(sw);
            (o, ((o - 1) * sw + eff_w).saturating_sub(wd) / 2)
        }
        Padding::Valid => ((wd - eff_w) / sw + 1, 0),
    };
    let cout = spec.out_channels;
    let cin_g = cin / spec.groups;
    let cout_g = cout / spec.groups;
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky * dh) as isize - pt as isize;
                                let ix = (ox * sw + kx * dw) as isize - pl as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin_g + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, ho, wo], out).unwrap()
}

fn run(spec: &ConvSpec, n: usize, h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(vec![n, spec.in_channels, h, w], -1.0, 1.0, &mut rng);
    let wt = Tensor::uniform(spec.weight_shape().to_vec(), -1.0, 1.0, &mut rng);
    let b = Tensor::uniform(vec![spec.out_channels], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(wt.clone());
    let bv = tape.constant(b.clone());
    let y = tape.conv2d(xv, wv, Some(bv), spec).unwrap();
    (tape.value(y).clone(), naive_conv(&x, &wt, Some(&b), spec))
}

#[test]
fn dense_conv_matches_oracle_on_small_grid() {
    let (got, want) = run(&ConvSpec::new(2, 3, 3), 1, 6, 6, 1);
    assert_eq!(got.shape(), want.shape());
    assert!(got.max_abs_diff(&want) < 1e-10);
}

#[test]
fn conv_matches_oracle_across_strides_dilations_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for &stride in &[1, 2] {
        for &dil in &[1, 2, 6] {
            for &k in &[1, 3, 4] {
                for &pad in &[Padding::Same, Padding::Valid] {
                    for &(cin, cout, groups) in &[(2, 3, 1), (4, 4, 4), (4, 2, 2), (1, 4, 1), (3, 3, 3)] {
                        let h = rng.random_range(3..=8);
                        let w = rng.random_range(3..=8);
                        let spec = ConvSpec::new(cin, cout, k)
                            .stride(stride)
                            .dilation(dil)
                            .padding(pad)
                            .groups(groups);
                        if pad == Padding::Valid && (h < dil * (k - 1) + 1 || w < dil * (k - 1) + 1) {
                            continue;
                        }
                        let (got, want) = run(&spec, 2, h, w, rng.random());
                        assert_eq!(got.shape(), want.shape(), "{spec:?} {h}x{w}");
                        assert!(got.max_abs_diff(&want) < 1e-10, "{spec:?} {h}x{w}");
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn ones_kernel_centre_is_nine() {
    let spec = ConvSpec::new(1, 1, 3).bias(false);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![1, 1, 5, 5]));
    let w = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
    let y = tape.conv2d(x, w, None, &spec).unwrap();
    assert_eq!(tape.value(y).data()[2 * 5 + 2], 9.0);
}

#[test]
fn valid_padding_on_small_input_is_empty_output() {
    let spec = ConvSpec::new(1, 1, 5).padding(Padding::Valid);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones(vec![1, 1, 3, 3]));
    let w = tape.constant(Tensor::ones(vec![1, 1, 5, 5]));
    let b = tape.constant(Tensor::zeros(vec![1]));
    assert!(matches!(
        tape.conv2d(x, w, Some(b), &spec),
        Err(dermseg::Error::EmptyOutput(_))
    ));
}

//! Registry of differentiable ops and losses, each checked against central
//! finite differences over many seeded random inputs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    combined_loss, dice_loss, discriminator_loss, generator_adversarial_loss, smoothing_loss, AdversarialForm,
};
use crate::nn::{
    Activation, Aspp, AsppSpec, Builder, ConvBn, ConvSpec, Forward, InvertedResidual, InvertedResidualSpec, MbConv,
    MbConvSpec, Mode, NormSpec, ParamStore, Padding, ResampleMode, SeparableConv, SqueezeExcite,
};
use crate::tensor::{finite_diff_check_many, Reduce, Tape, Tensor, Unary, Var};

type Eval = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One random draw of a case: differentiable inputs and the scalar function.
pub struct Instance {
    pub inputs: Vec<Tensor>,
    pub eval: Eval,
}

pub struct GradCase {
    pub name: &'static str,
    /// Node label of the op under test, as used by [`Tape::corrupt_gradients_of`].
    pub label: &'static str,
    pub sample: fn(&mut ChaCha8Rng) -> Result<Instance>,
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub seeds: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Draws whose nearest kink is closer than this are redrawn.
    pub min_kink_margin: f64,
    pub max_redraws: usize,
    pub corrupt: Option<&'static str>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            eps: 1e-3,
            tolerance: 1e-4,
            min_kink_margin: 5e-3,
            max_redraws: 200,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub redraws: usize,
    pub millis: f64,
    pub error: Option<String>,
    pub passed: bool,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

fn binary_mask(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_bool(0.4) as u8 as f64)
}

/// Contract a tensor-valued op to a scalar with fixed random weights so
/// every output coordinate gets a distinct upstream gradient.
fn weighted(rng: &mut ChaCha8Rng, out_shape: &[usize], op: Eval) -> Eval {
    let r = uniform(rng, out_shape, -1.0, 1.0);
    Box::new(move |t, v| {
        let y = op(t, v)?;
        let w = t.constant(r.clone());
        let p = t.mul(y, w)?;
        t.sum_all(p)
    })
}

fn unary_case(rng: &mut ChaCha8Rng, kind: Unary, lo: f64, hi: f64) -> Result<Instance> {
    let shape = [2, 3, 4];
    Ok(Instance {
        inputs: vec![uniform(rng, &shape, lo, hi)],
        eval: weighted(rng, &shape, Box::new(move |t, v| t.unary(kind, v[0]))),
    })
}

/// `nonzero` keeps the second operand's magnitude in [0.5, 2) (for division).
fn binary_case(
    rng: &mut ChaCha8Rng,
    f: fn(&mut Tape, Var, Var) -> Result<Var>,
    b_shape: &[usize],
    nonzero: bool,
) -> Result<Instance> {
    let shape = [2, 3, 4];
    let b = if nonzero {
        Tensor::from_fn(b_shape.to_vec(), |_| {
            let m = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    } else {
        uniform(rng, b_shape, -1.0, 1.0)
    };
    Ok(Instance {
        inputs: vec![uniform(rng, &shape, -1.0, 1.0), b],
        eval: weighted(rng, &shape, Box::new(move |t, v| f(t, v[0], v[1]))),
    })
}

fn reduce_case(rng: &mut ChaCha8Rng, kind: Reduce, axes: &'static [usize]) -> Result<Instance> {
    let shape = [3, 4, 5];
    let out: Vec<usize> = (0..3).filter(|d| !axes.contains(d)).map(|d| shape[d]).collect();
    Ok(Instance {
        inputs: vec![uniform(rng, &shape, -1.0, 1.0)],
        eval: weighted(rng, &out, Box::new(move |t, v| t.reduce(kind, v[0], axes))),
    })
}

fn conv_case(rng: &mut ChaCha8Rng, spec: ConvSpec, hw: (usize, usize)) -> Result<Instance> {
    let x = uniform(rng, &[2, spec.in_channels, hw.0, hw.1], -1.0, 1.0);
    let w = uniform(rng, &spec.weight_shape(), -1.0, 1.0);
    let b = uniform(rng, &[spec.out_channels], -1.0, 1.0);
    let (ho, wo) = spec.output_hw(hw.0, hw.1)?;
    let out = [2, spec.out_channels, ho, wo];
    Ok(Instance {
        inputs: vec![x, w, b],
        eval: weighted(rng, &out, Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), &spec))),
    })
}

/// A block evaluated in train mode with frozen, seeded parameters;
/// differentiated with respect to its input.
fn block_case<B: 'static>(
    rng: &mut ChaCha8Rng,
    in_shape: [usize; 4],
    out_shape: [usize; 4],
    build: impl FnOnce(&mut Builder<'_>) -> Result<B>,
    forward: fn(&B, &mut Forward<'_>, Var) -> Result<Var>,
) -> Result<Instance> {
    let mut store = ParamStore::new();
    let mut init = ChaCha8Rng::seed_from_u64(rng.random());
    let block = build(&mut Builder::new(&mut store, &mut init))?;
    let x = uniform(rng, &in_shape, -1.0, 1.0);
    let op: Eval = Box::new(move |t, v| {
        let mut f = Forward::new(t, &store, Mode::Train, false);
        forward(&block, &mut f, v[0])
    });
    Ok(Instance {
        inputs: vec![x],
        eval: weighted(rng, &out_shape, op),
    })
}

fn mask_pair(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, [usize; 4]) {
    let shape = [2, 1, rng.random_range(2..=5), rng.random_range(2..=5)];
    (uniform(rng, &shape, 0.05, 0.95), binary_mask(rng, &shape), shape)
}

/// Discriminator outputs. Below 0.1 the third derivative of log makes the
/// central-difference truncation error alone exceed 1e-4 at ε = 1e-3.
fn patch_scores(rng: &mut ChaCha8Rng) -> Tensor {
    uniform(rng, &[2, 1, 2, 2], 0.1, 0.9)
}

fn norm() -> NormSpec {
    NormSpec::default()
}

/// Every registered case, in table order.
pub fn registry() -> Vec<GradCase> {
    vec![
        GradCase { name: "abs", label: "abs", sample: |r| unary_case(r, Unary::Abs, -2.0, 2.0) },
        GradCase { name: "log", label: "log", sample: |r| unary_case(r, Unary::Log, 0.2, 3.0) },
        GradCase { name: "neg", label: "neg", sample: |r| unary_case(r, Unary::Neg, -2.0, 2.0) },
        GradCase { name: "sigmoid", label: "sigmoid", sample: |r| unary_case(r, Unary::Sigmoid, -4.0, 4.0) },
        GradCase { name: "swish", label: "swish", sample: |r| unary_case(r, Unary::Swish, -4.0, 4.0) },
        GradCase { name: "relu", label: "relu", sample: |r| unary_case(r, Unary::Relu, -2.0, 2.0) },
        GradCase { name: "relu6", label: "clamp", sample: |r| unary_case(r, Unary::Clamp(0.0, 6.0), -2.0, 8.0) },
        GradCase {
            name: "leaky_relu",
            label: "leaky_relu",
            sample: |r| unary_case(r, Unary::LeakyRelu(0.2), -2.0, 2.0),
        },
        GradCase { name: "scale", label: "scale", sample: |r| unary_case(r, Unary::Scale(-1.7), -2.0, 2.0) },
        GradCase { name: "shift", label: "shift", sample: |r| unary_case(r, Unary::Shift(0.3), -2.0, 2.0) },
        GradCase { name: "add", label: "add", sample: |r| binary_case(r, Tape::add, &[2, 3, 4], false) },
        GradCase { name: "sub", label: "sub", sample: |r| binary_case(r, Tape::sub, &[2, 3, 4], false) },
        GradCase { name: "mul", label: "mul", sample: |r| binary_case(r, Tape::mul, &[2, 3, 4], false) },
        GradCase { name: "div", label: "div", sample: |r| binary_case(r, Tape::div, &[2, 3, 4], true) },
        GradCase { name: "add_broadcast", label: "add", sample: |r| binary_case(r, Tape::add, &[3, 1], false) },
        GradCase { name: "mul_broadcast", label: "mul", sample: |r| binary_case(r, Tape::mul, &[4], false) },
        GradCase { name: "sum_axis", label: "sum", sample: |r| reduce_case(r, Reduce::Sum, &[1]) },
        GradCase { name: "mean_spatial", label: "mean", sample: |r| reduce_case(r, Reduce::Mean, &[1, 2]) },
        GradCase { name: "max_axis", label: "max", sample: |r| reduce_case(r, Reduce::Max, &[2]) },
        GradCase {
            name: "reshape",
            label: "reshape",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![uniform(r, &[2, 6], -1.0, 1.0)],
                    eval: weighted(r, &[3, 4], Box::new(|t, v| t.reshape(v[0], &[3, 4]))),
                })
            },
        },
        GradCase {
            name: "concat",
            label: "concat",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![uniform(r, &[2, 1, 3], -1.0, 1.0), uniform(r, &[2, 2, 3], -1.0, 1.0)],
                    eval: weighted(r, &[2, 3, 3], Box::new(|t, v| t.concat(&[v[0], v[1]], 1))),
                })
            },
        },
        GradCase { name: "conv2d", label: "conv2d", sample: |r| conv_case(r, ConvSpec::new(2, 3, 3), (5, 5)) },
        GradCase {
            name: "conv2d_strided",
            label: "conv2d",
            sample: |r| conv_case(r, ConvSpec::new(2, 2, 4).stride(2), (6, 7)),
        },
        GradCase {
            name: "conv2d_dilated",
            label: "conv2d",
            sample: |r| conv_case(r, ConvSpec::new(2, 2, 3).dilation(2), (6, 6)),
        },
        GradCase {
            name: "conv2d_depthwise",
            label: "conv2d",
            sample: |r| conv_case(r, ConvSpec::depthwise(3, 3).stride(2), (5, 6)),
        },
        GradCase {
            name: "conv2d_grouped_valid",
            label: "conv2d",
            sample: |r| conv_case(r, ConvSpec::new(4, 2, 2).groups(2).padding(Padding::Valid), (4, 5)),
        },
        GradCase {
            name: "batch_norm_train",
            label: "batch_norm",
            sample: |r| {
                let x = uniform(r, &[3, 2, 2, 3], -2.0, 2.0);
                let g = uniform(r, &[2], 0.5, 1.5);
                let b = uniform(r, &[2], -0.5, 0.5);
                Ok(Instance {
                    inputs: vec![x, g, b],
                    eval: weighted(
                        r,
                        &[3, 2, 2, 3],
                        Box::new(|t, v| t.batch_norm_train(v[0], v[1], v[2], 1e-3).map(|(y, _)| y)),
                    ),
                })
            },
        },
        GradCase {
            name: "batch_norm_eval",
            label: "batch_norm_eval",
            sample: |r| {
                let x = uniform(r, &[2, 2, 3, 3], -2.0, 2.0);
                let g = uniform(r, &[2], 0.5, 1.5);
                let b = uniform(r, &[2], -0.5, 0.5);
                let mean = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
                let var = [r.random_range(0.5..2.0), r.random_range(0.5..2.0)];
                Ok(Instance {
                    inputs: vec![x, g, b],
                    eval: weighted(
                        r,
                        &[2, 2, 3, 3],
                        Box::new(move |t, v| t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-3)),
                    ),
                })
            },
        },
        GradCase {
            name: "resample_bilinear",
            label: "resample",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![uniform(r, &[1, 2, 3, 4], -1.0, 1.0)],
                    eval: weighted(r, &[1, 2, 7, 5], Box::new(|t, v| t.resample(v[0], ResampleMode::Bilinear, (7, 5)))),
                })
            },
        },
        GradCase {
            name: "resample_nearest",
            label: "resample",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![uniform(r, &[1, 2, 4, 4], -1.0, 1.0)],
                    eval: weighted(r, &[1, 2, 6, 3], Box::new(|t, v| t.resample(v[0], ResampleMode::Nearest, (6, 3)))),
                })
            },
        },
        GradCase {
            name: "squeeze_excite",
            label: "sigmoid",
            sample: |r| {
                block_case(r, [2, 4, 3, 3], [2, 4, 3, 3], |b| SqueezeExcite::build(b, "se", 4, 2), SqueezeExcite::forward)
            },
        },
        GradCase {
            name: "conv_bn",
            label: "batch_norm",
            sample: |r| {
                block_case(
                    r,
                    [2, 2, 4, 4],
                    [2, 3, 2, 2],
                    |b| ConvBn::build(b, "cb", ConvSpec::new(2, 3, 3).stride(2).bias(false), norm(), Activation::Swish),
                    ConvBn::forward,
                )
            },
        },
        GradCase {
            name: "mbconv",
            label: "conv2d",
            sample: |r| {
                let spec = MbConvSpec {
                    in_channels: 3,
                    out_channels: 3,
                    expand_ratio: 2,
                    kernel: 3,
                    stride: 1,
                    se_reduction: Some(2),
                };
                block_case(r, [2, 3, 4, 4], [2, 3, 4, 4], move |b| MbConv::build(b, "mb", spec, norm()), MbConv::forward)
            },
        },
        GradCase {
            name: "inverted_residual",
            label: "conv2d",
            sample: |r| {
                let spec = InvertedResidualSpec {
                    in_channels: 2,
                    out_channels: 3,
                    expand_ratio: 2,
                    stride: 2,
                    dilation: 1,
                };
                block_case(
                    r,
                    [2, 2, 4, 4],
                    [2, 3, 2, 2],
                    move |b| InvertedResidual::build(b, "ir", spec, norm()),
                    InvertedResidual::forward,
                )
            },
        },
        GradCase {
            name: "separable_conv",
            label: "conv2d",
            sample: |r| {
                block_case(
                    r,
                    [2, 2, 4, 4],
                    [2, 3, 4, 4],
                    |b| SeparableConv::build(b, "sep", 2, 3, 2, norm()),
                    SeparableConv::forward,
                )
            },
        },
        GradCase {
            name: "aspp",
            label: "concat",
            sample: |r| {
                let spec = AsppSpec {
                    in_channels: 2,
                    branch_channels: 2,
                    out_channels: 2,
                    rates: vec![1, 2],
                };
                block_case(r, [2, 2, 4, 4], [2, 2, 4, 4], move |b| Aspp::build(b, "aspp", spec, norm()), Aspp::forward)
            },
        },
        GradCase {
            name: "dice_loss",
            label: "dice_loss",
            sample: |r| {
                let (p, y, _) = mask_pair(r);
                Ok(Instance {
                    inputs: vec![p],
                    eval: Box::new(move |t, v| {
                        let y = t.constant(y.clone());
                        dice_loss(t, v[0], y)
                    }),
                })
            },
        },
        GradCase {
            name: "smoothing_loss",
            label: "smoothing_loss",
            sample: |r| {
                let (p, y, _) = mask_pair(r);
                Ok(Instance {
                    inputs: vec![p],
                    eval: Box::new(move |t, v| {
                        let y = t.constant(y.clone());
                        smoothing_loss(t, v[0], y)
                    }),
                })
            },
        },
        GradCase {
            name: "combined_loss",
            label: "smoothing_loss",
            sample: |r| {
                let (p, y, _) = mask_pair(r);
                let w = r.random_range(0.1..2.0);
                Ok(Instance {
                    inputs: vec![p],
                    eval: Box::new(move |t, v| {
                        let y = t.constant(y.clone());
                        combined_loss(t, v[0], y, w)
                    }),
                })
            },
        },
        GradCase {
            name: "discriminator_loss",
            label: "log",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![patch_scores(r), patch_scores(r)],
                    eval: Box::new(|t, v| discriminator_loss(t, v[0], v[1])),
                })
            },
        },
        GradCase {
            name: "generator_adversarial_nonsaturating",
            label: "log",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![patch_scores(r)],
                    eval: Box::new(|t, v| generator_adversarial_loss(t, v[0], AdversarialForm::NonSaturating)),
                })
            },
        },
        GradCase {
            name: "generator_adversarial_saturating",
            label: "log",
            sample: |r| {
                Ok(Instance {
                    inputs: vec![patch_scores(r)],
                    eval: Box::new(|t, v| generator_adversarial_loss(t, v[0], AdversarialForm::Saturating)),
                })
            },
        },
    ]
}

/// Labels that [`SuiteConfig::corrupt`] may name.
pub fn corruptible_labels() -> Vec<&'static str> {
    let mut labels: Vec<&'static str> = registry().iter().map(|c| c.label).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// Check one case over `cfg.seeds` seeds, redrawing inputs that sit too
/// close to a kink of a piecewise op.
pub fn run_case(case: &GradCase, cfg: &SuiteConfig) -> CaseOutcome {
    let start = Instant::now();
    let mut out = CaseOutcome {
        name: case.name,
        seeds: cfg.seeds,
        max_rel_error: 0.0,
        worst_seed: 0,
        redraws: 0,
        millis: 0.0,
        error: None,
        passed: false,
    };
    let corrupt = cfg.corrupt;
    let result = (|| -> Result<()> {
        for seed in 0..cfg.seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut attempts = 0;
            loop {
                let inst = (case.sample)(&mut rng)?;
                let eval = &inst.eval;
                let report = finite_diff_check_many(
                    |t, v| {
                        if let Some(label) = corrupt {
                            t.corrupt_gradients_of(label);
                        }
                        eval(t, v)
                    },
                    &inst.inputs,
                    cfg.eps,
                )?;
                if report.kink_margin < cfg.min_kink_margin && attempts < cfg.max_redraws {
                    attempts += 1;
                    out.redraws += 1;
                    continue;
                }
                if report.max_rel_error > out.max_rel_error {
                    out.max_rel_error = report.max_rel_error;
                    out.worst_seed = seed;
                }
                break;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    out.passed = out.error.is_none() && out.max_rel_error <= cfg.tolerance;
    out.millis = start.elapsed().as_secs_f64() * 1e3;
    out
}

pub fn run_suite(cfg: &SuiteConfig) -> Vec<CaseOutcome> {
    registry().iter().map(|c| run_case(c, cfg)).collect()
}

/// Tab-separated table, one row per case.
pub fn report_table(outcomes: &[CaseOutcome]) -> String {
    let mut s = String::from("op\tseeds\tmax_rel_error\tworst_seed\tredraws\tms\tstatus\n");
    for o in outcomes {
        let status = match (&o.error, o.passed) {
            (Some(e), _) => format!("ERROR {e}"),
            (None, true) => "PASS".to_string(),
            (None, false) => "FAIL".to_string(),
        };
        s.push_str(&format!(
            "{}\t{}\t{:.3e}\t{}\t{}\t{:.1}\t{}\n",
            o.name, o.seeds, o.max_rel_error, o.worst_seed, o.redraws, o.millis, status
        ));
    }
    s
}

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dermseg::models::{DiscriminatorConfig, ModelGraph};
use dermseg::nn::ConvSpec;
use dermseg::train::RunConfig;
use dermseg::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    for (name, spec) in [
        ("3x3 32->32", ConvSpec::new(32, 32, 3)),
        ("1x1 64->64", ConvSpec::new(64, 64, 1)),
        ("dw3x3 64", ConvSpec::depthwise(64, 3)),
        ("3x3 s2 32->64", ConvSpec::new(32, 64, 3).stride(2)),
    ] {
        let x = rand_tensor(vec![4, spec.in_channels, 32, 32], 1);
        let w = rand_tensor(spec.weight_shape().to_vec(), 2);
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let wv = tape.constant(w.clone());
                black_box(tape.conv2d(xv, wv, None, &spec).unwrap());
            })
        });
        g.bench_function(BenchmarkId::new("forward+backward", name), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone(), true);
                let wv = tape.param(w.clone());
                let y = tape.conv2d(xv, wv, None, &spec).unwrap();
                let loss = tape.sum_all(y).unwrap();
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
    g.finish();
}

fn models(c: &mut Criterion) {
    let mut g = c.benchmark_group("predict");
    g.sample_size(20);
    for preset in ["egan-toy", "mgan-toy"] {
        let cfg = RunConfig::preset(preset).unwrap();
        let model = ModelGraph::generator(&cfg.generator, 0).unwrap();
        let [h, w] = cfg.generator.input_size;
        let x = rand_tensor(vec![1, 3, h, w], 3);
        g.bench_function(preset, |b| b.iter(|| black_box(model.predict(&x).unwrap())));
    }
    let d = ModelGraph::discriminator(&DiscriminatorConfig::scaled(0.25), 0).unwrap();
    let m = rand_tensor(vec![1, 1, 64, 64], 4);
    g.bench_function("discriminator-toy", |b| b.iter(|| black_box(d.predict(&m).unwrap())));
    g.finish();
}

criterion_group!(benches, conv, models);
criterion_main!(benches);

//! The two-player step and the loop around it on small synthetic data.

use std::fs;

use dermseg::data::{batch, synth_generate};
use dermseg::models::ModelGraph;
use dermseg::nn::ParamStore;
use dermseg::train::{
    gan_step, gan_step_observed, prepare_data, train_loop, GanState, LoopOptions, Phase, RunConfig, BEST_FILE,
    HISTORY_FILE, HISTORY_HEADER, LAST_FILE,
};
use dermseg::Tensor;

/// mgan-toy shrunk to 32×32 and a handful of samples.
fn small_config() -> RunConfig {
    let mut cfg = RunConfig::preset("mgan-toy").unwrap();
    cfg.generator.input_size = [32, 32];
    cfg.data.synth.size = 32;
    cfg.data.synth.count = 20;
    cfg.train.batch_size = 4;
    cfg.train.eval_every = 2;
    cfg.train.checkpoint_every = 2;
    cfg
}

fn first_batch(cfg: &RunConfig) -> (Tensor, Tensor) {
    let data = synth_generate(&cfg.data.synth).unwrap();
    let refs: Vec<_> = data.iter().take(cfg.train.batch_size).collect();
    batch(&refs).unwrap()
}

fn snapshot(store: &ParamStore) -> Vec<Vec<u64>> {
    store
        .iter()
        .map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn each_sub_step_touches_only_its_own_player() {
    let cfg = small_config();
    let (x, y) = first_batch(&cfg);
    let mut state = GanState::init(&cfg, 5).unwrap();
    let mut seen = Vec::new();
    gan_step_observed(&mut state, &x, &y, &cfg.train, |phase, s| {
        seen.push((phase, snapshot(&s.g.store), snapshot(&s.d.store)));
    })
    .unwrap();
    let phases: Vec<Phase> = seen.iter().map(|s| s.0).collect();
    assert_eq!(
        phases,
        [Phase::BeforeDiscriminator, Phase::AfterDiscriminator, Phase::AfterGenerator]
    );
    let (_, g0, d0) = &seen[0];
    let (_, g1, d1) = &seen[1];
    let (_, g2, d2) = &seen[2];
    assert_eq!(g0, g1, "generator changed during the discriminator update");
    assert_ne!(d0, d1, "discriminator did not move");
    assert_eq!(d1, d2, "discriminator changed during the generator update");
    assert_ne!(g1, g2, "generator did not move");
}

#[test]
fn without_adversarial_weight_the_generator_ignores_the_discriminator() {
    let mut cfg = small_config();
    cfg.train.lambda_adv = 0.0;
    let (x, y) = first_batch(&cfg);
    let mut a = GanState::init(&cfg, 5).unwrap();
    let mut b = GanState::init(&cfg, 5).unwrap();
    b.d = ModelGraph::discriminator(&cfg.discriminator, 999).unwrap();
    let ra = gan_step(&mut a, &x, &y, &cfg.train).unwrap();
    let rb = gan_step(&mut b, &x, &y, &cfg.train).unwrap();
    assert_eq!(ra.adversarial, 0.0);
    assert_eq!(ra.combined, rb.combined);
    assert_eq!(snapshot(&a.g.store), snapshot(&b.g.store));
}

#[test]
fn frozen_batch_moving_average_strictly_decreases() {
    let cfg = RunConfig::preset("mgan-toy").unwrap();
    let (x, y) = first_batch(&cfg);
    let mut state = GanState::init(&cfg, 25).unwrap();
    let curve: Vec<f64> = (0..50)
        .map(|_| gan_step(&mut state, &x, &y, &cfg.train).unwrap().combined)
        .collect();
    let ma: Vec<f64> = curve.windows(10).map(|w| w.iter().sum::<f64>() / 10.0).collect();
    for (i, w) in ma.windows(2).enumerate() {
        assert!(w[1] < w[0], "moving average rose at window {i}: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn zero_steps_writes_initial_checkpoint_and_header_only_history() {
    let mut cfg = small_config();
    cfg.train.max_steps = 0;
    let (train, val, _) = prepare_data(&cfg.data, cfg.generator.input_size).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = train_loop(&cfg, &train, &val, dir.path(), &LoopOptions::default()).unwrap();
    assert_eq!(summary.steps, 0);
    assert!(dir.path().join(BEST_FILE).exists());
    assert!(dir.path().join(LAST_FILE).exists());
    let history = fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(history.trim_end(), HISTORY_HEADER);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let mut cfg = small_config();
    cfg.train.max_steps = 4;
    let (train, val, _) = prepare_data(&cfg.data, cfg.generator.input_size).unwrap();
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    train_loop(&cfg, &train, &val, full.path(), &LoopOptions::default()).unwrap();
    let first = LoopOptions {
        resume: false,
        stop_after: Some(2),
    };
    assert_eq!(train_loop(&cfg, &train, &val, split.path(), &first).unwrap().steps, 2);
    let rest = LoopOptions {
        resume: true,
        stop_after: None,
    };
    assert_eq!(train_loop(&cfg, &train, &val, split.path(), &rest).unwrap().steps, 4);
    for f in [BEST_FILE, LAST_FILE, HISTORY_FILE] {
        let a = fs::read(full.path().join(f)).unwrap();
        let b = fs::read(split.path().join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
}

#[test]
fn empty_batch_is_rejected() {
    let cfg = small_config();
    let mut state = GanState::init(&cfg, 5).unwrap();
    let x = Tensor::zeros(vec![0, 3, 32, 32]);
    let y = Tensor::zeros(vec![0, 1, 32, 32]);
    assert!(gan_step(&mut state, &x, &y, &cfg.train).is_err());
}

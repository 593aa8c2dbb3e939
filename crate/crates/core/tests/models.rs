//! Generator and discriminator contracts at toy and full scale.

use dermseg::models::{build_patch_discriminator, DiscriminatorConfig, GeneratorConfig, ModelGraph};
use dermseg::train::RunConfig;
use dermseg::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn generator(preset: &str) -> ModelGraph {
    let cfg = RunConfig::preset(preset).unwrap();
    ModelGraph::generator(&cfg.generator, cfg.train.seed).unwrap()
}

#[test]
fn full_scale_parameter_counts() {
    let egan = generator("egan-full").param_count();
    let mgan = generator("mgan-full").param_count();
    assert!((15_000_000..=40_000_000).contains(&egan), "egan {egan}");
    assert!((1_500_000..=3_500_000).contains(&mgan), "mgan {mgan}");
    assert!(mgan * 5 <= egan);
    assert!(generator("egan-toy").param_count() < egan);
    assert!(generator("mgan-toy").param_count() < mgan);
}

#[test]
fn patch_discriminator_count_matches_closed_form() {
    let d = build_patch_discriminator(&DiscriminatorConfig::default(), 0).unwrap();
    let mut want = 0;
    let mut cin = 1;
    for w in [64, 128, 256, 512, 1] {
        want += cin * w * 16 + w;
        cin = w;
    }
    assert_eq!(want, 2_762_689);
    assert_eq!(d.param_count(), want);
}

#[test]
fn discriminator_scores_are_probabilities_per_patch() {
    let d = build_patch_discriminator(&DiscriminatorConfig::scaled(0.25), 5).unwrap();
    let x = Tensor::uniform(vec![2, 1, 96, 64], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(6));
    let y = d.predict(&x).unwrap();
    assert_eq!(y.shape(), &[2, 1, 3, 2]);
    assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn taps_do_not_change_the_output_and_repeat_exactly() {
    let g = ModelGraph::generator(&GeneratorConfig::egan(64, 0.25, 1.0), 2).unwrap();
    let x = Tensor::uniform(vec![1, 3, 64, 64], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
    let plain = g.predict(&x).unwrap();
    let (none, maps) = g.forward_with_taps::<&str>(&x, &[]).unwrap();
    assert!(maps.is_empty());
    assert_eq!(none, plain);
    let names = g.tap_names();
    let (a, first) = g.forward_with_taps(&x, &names).unwrap();
    let (_, second) = g.forward_with_taps(&x, &names).unwrap();
    assert_eq!(a, plain);
    assert_eq!(first.len(), 11);
    for ((na, ta), (nb, tb)) in first.iter().zip(&second) {
        assert_eq!(na, nb);
        assert!(ta.data().iter().zip(tb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let tap_names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        tap_names,
        ["Block1", "Block2", "Block3", "Block4", "Block5", "Block6", "Block7", "D1", "D2", "D3", "D4"]
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generator_output_matches_input(k in 1usize..4, j in 1usize..3, mgan in any::<bool>()) {
        let (h, w) = if mgan { (8 * k, 8 * j) } else { (32 * k, 32 * j) };
        let mut cfg = if mgan { GeneratorConfig::mgan(32, 0.25) } else { GeneratorConfig::egan(32, 0.25, 1.0) };
        cfg.input_size = [h, w];
        let g = ModelGraph::generator(&cfg, 1).unwrap();
        let x = Tensor::uniform(vec![1, 3, h, w], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(k as u64));
        let y = g.predict(&x).unwrap();
        prop_assert_eq!(y.shape(), &[1, 1, h, w]);
        prop_assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn patch_extent_is_ceil_over_32(h in 32usize..140, w in 32usize..140) {
        let d = build_patch_discriminator(&DiscriminatorConfig::scaled(0.0625), 0).unwrap();
        let y = d.predict(&Tensor::zeros(vec![1, 1, h, w])).unwrap();
        prop_assert_eq!(&y.shape()[2..], &[h.div_ceil(32), w.div_ceil(32)]);
    }
}

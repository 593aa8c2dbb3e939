//! Dice and smoothing losses against brute-force double loops.

use dermseg::losses::{combined_loss, dice_loss, smoothing_loss, MaskPair};
use dermseg::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dice_oracle(p: &[f64], y: &[f64]) -> f64 {
    let (mut inter, mut pp, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..p.len() {
        inter += p[i] * y[i];
        pp += p[i] * p[i];
        yy += y[i] * y[i];
    }
    if pp + yy == 0.0 {
        return 0.0;
    }
    1.0 - 2.0 * inter / (pp + yy)
}

/// Every pixel, every in-bounds 4-neighbour: ordered pairs.
fn smoothing_oracle(p: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if y[i] == y[j] {
                    s += y[i] * (p[i] - p[j]).abs();
                }
            }
        }
    }
    s
}

fn eval(p: &Tensor, y: &Tensor, f: fn(&mut Tape, dermseg::Var, dermseg::Var) -> dermseg::Result<dermseg::Var>) -> f64 {
    let mut tape = Tape::new();
    let pv = tape.constant(p.clone());
    let yv = tape.constant(y.clone());
    let out = f(&mut tape, pv, yv).unwrap();
    tape.value(out).item().unwrap()
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Tensor, Tensor, usize, usize) {
    let h = rng.random_range(1..=5);
    let w = rng.random_range(1..=5);
    let p = Tensor::uniform(vec![h, w], 0.0, 1.0, rng);
    let density: f64 = rng.random();
    let y = Tensor::from_fn(vec![h, w], |_| (rng.random::<f64>() < density) as u8 as f64);
    (p, y, h, w)
}

#[test]
fn thousand_random_grids_match_the_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_dice, mut worst_smooth) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (p, y, h, w) = random_pair(&mut rng);
        let d = eval(&p, &y, dice_loss);
        let s = eval(&p, &y, smoothing_loss);
        worst_dice = worst_dice.max((d - dice_oracle(p.data(), y.data())).abs());
        worst_smooth = worst_smooth.max((s - smoothing_oracle(p.data(), y.data(), h, w)).abs());
    }
    assert!(worst_dice <= 1e-12, "dice {worst_dice:e}");
    assert!(worst_smooth <= 1e-12, "smoothing {worst_smooth:e}");
}

#[test]
fn worked_examples_are_exact() {
    let y = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let p = Tensor::new(vec![2, 2], vec![1.0, 0.6, 0.2, 0.2]).unwrap();
    let pair = MaskPair::new(y, p).unwrap();
    assert_eq!(pair.smoothing_loss().unwrap(), 0.8);
    assert_eq!(pair.combined_loss(1.0).unwrap(), pair.dice_loss().unwrap() + 0.8);

    let y = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    let p = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    assert_eq!(MaskPair::new(y, p).unwrap().dice_loss().unwrap(), 1.0 / 3.0);
}

#[test]
fn batched_masks_average_per_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (p1, y1, h, w) = random_pair(&mut rng);
    let p2 = Tensor::uniform(vec![h, w], 0.0, 1.0, &mut rng);
    let y2 = Tensor::from_fn(vec![h, w], |_| (rng.random::<f64>() < 0.5) as u8 as f64);
    let p = Tensor::stack(&[p1.clone(), p2.clone()]).unwrap();
    let y = Tensor::stack(&[y1.clone(), y2.clone()]).unwrap();
    let want = 0.5 * (dice_oracle(p1.data(), y1.data()) + dice_oracle(p2.data(), y2.data()));
    assert!((eval(&p, &y, dice_loss) - want).abs() < 1e-12);
    let want = 0.5 * (smoothing_oracle(p1.data(), y1.data(), h, w) + smoothing_oracle(p2.data(), y2.data(), h, w));
    assert!((eval(&p, &y, smoothing_loss) - want).abs() < 1e-12);
}

proptest! {
    #[test]
    fn dice_is_symmetric_to_the_bit(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..25)) {
        let n = v.len();
        let a = Tensor::new(vec![1, n], v.iter().map(|p| p.0).collect()).unwrap();
        let b = Tensor::new(vec![1, n], v.iter().map(|p| p.1).collect()).unwrap();
        prop_assert_eq!(eval(&a, &b, dice_loss).to_bits(), eval(&b, &a, dice_loss).to_bits());
    }

    #[test]
    fn smoothing_ignores_a_constant_shift(seed in any::<u64>(), c in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, y, h, w) = random_pair(&mut rng);
        let shifted = p.map(|v| v + c);
        let a = eval(&p, &y, smoothing_loss);
        let b = eval(&shifted, &y, smoothing_loss);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        prop_assert!((b - smoothing_oracle(shifted.data(), y.data(), h, w)).abs() <= 1e-12);
    }

    #[test]
    fn combined_is_exactly_the_weighted_sum(seed in any::<u64>(), weight in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, y, _, _) = random_pair(&mut rng);
        let mut tape = Tape::new();
        let pv = tape.constant(p);
        let yv = tape.constant(y);
        let c = combined_loss(&mut tape, pv, yv, weight).unwrap();
        let d = dice_loss(&mut tape, pv, yv).unwrap();
        let s = smoothing_loss(&mut tape, pv, yv).unwrap();
        let want = tape.value(d).item().unwrap() + weight * tape.value(s).item().unwrap();
        prop_assert_eq!(tape.value(c).item().unwrap().to_bits(), want.to_bits());
    }

    #[test]
    fn losses_are_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, y, _, _) = random_pair(&mut rng);
        let d = eval(&p, &y, dice_loss);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!(eval(&p, &y, smoothing_loss) >= 0.0);
    }
}

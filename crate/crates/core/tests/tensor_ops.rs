//! Tape arithmetic, reductions and backward on hand-checkable inputs.

use dermseg::tensor::{finite_diff_check, Reduce};
use dermseg::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn activation_values() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, -1.0, 2.0]));
    let s = tape.sigmoid(x).unwrap();
    let sw = tape.swish(x).unwrap();
    let lr = tape.leaky_relu(x, 0.2).unwrap();
    let z = tape_const(&mut tape, &[-1.0, 3.0, 7.0]);
    let r6 = tape.relu6(z).unwrap();
    assert_eq!(tape.value(s).data()[0], 0.5);
    assert_eq!(tape.value(sw).data()[0], 0.0);
    assert_eq!(tape.value(lr).data(), &[0.0, -0.2, 2.0]);
    assert_eq!(tape.value(r6).data(), &[0.0, 3.0, 6.0]);
}

fn tape_const(tape: &mut Tape, v: &[f64]) -> dermseg::Var {
    tape.constant(t(&[v.len()], v))
}

#[test]
fn leaky_relu_gradient_at_zero_takes_positive_branch() {
    let mut tape = Tape::new();
    let x = tape.param(t(&[2], &[0.0, -1.0]));
    let y = tape.leaky_relu(x, 0.2).unwrap();
    let l = tape.sum_all(y).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(&tape, x).data(), &[1.0, 0.2]);
}

#[test]
fn reductions() {
    let mut tape = Tape::new();
    let v = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
    let s = tape.sum_all(v).unwrap();
    assert_eq!(tape.value(s).item().unwrap(), 6.0);
    let z = tape.constant(Tensor::zeros(vec![2, 3]));
    let m = tape.mean_all(z).unwrap();
    assert_eq!(tape.value(m).item().unwrap(), 0.0);
    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let col = tape.reduce(Reduce::Sum, a, &[0]).unwrap();
    assert_eq!(tape.value(col).data(), &[4.0, 6.0]);
    assert!(tape.reduce(Reduce::Sum, a, &[2]).is_err());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::uniform(vec![2, 3, 4], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(3)));
    let l = tape.sum_all(x).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.wrt(&tape, x).data().iter().all(|&v| v == 1.0));

    let mut tape = Tape::new();
    let x = tape.param(t(&[1], &[3.0]));
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum_all(sq).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(&tape, x).data(), &[6.0]);
}

#[test]
fn backward_needs_a_scalar_and_leaves_constants_alone() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::ones(vec![2]));
    let c = tape.constant(Tensor::ones(vec![2]));
    let y = tape.mul(x, c).unwrap();
    assert!(tape.backward(y).is_err());
    let l = tape.sum_all(y).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(c).is_none());
}

#[test]
fn disconnected_leaf_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::ones(vec![2]));
    let unused = tape.param(Tensor::ones(vec![3]));
    let l = tape.sum_all(x).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.disconnected(), &[unused]);
    assert_eq!(g.wrt(&tape, unused).data(), &[0.0; 3]);
}

#[test]
fn finite_diff_of_sum_is_exact() {
    let x = Tensor::uniform(vec![5], -3.0, 3.0, &mut ChaCha8Rng::seed_from_u64(9));
    let r = finite_diff_check(|t, v| t.sum_all(v), &x, 1e-3).unwrap();
    assert!(r.max_rel_error < 1e-10, "{}", r.max_rel_error);
}

#[test]
fn finite_diff_of_sigmoid_sum() {
    let x = Tensor::uniform(vec![8], -2.0, 2.0, &mut ChaCha8Rng::seed_from_u64(11));
    let r = finite_diff_check(
        |t, v| {
            let s = t.sigmoid(v)?;
            t.sum_all(s)
        },
        &x,
        1e-3,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4);
}

#[test]
fn finite_diff_of_combined_loss_on_8x8() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let p = Tensor::uniform(vec![8, 8], 0.05, 0.95, &mut rng);
    let y = Tensor::uniform(vec![8, 8], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
    let r = finite_diff_check(
        |t, v| {
            let yv = t.constant(y.clone());
            dermseg::losses::combined_loss(t, v, yv, 1.0)
        },
        &p,
        1e-3,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4, "{}", r.max_rel_error);
}

#[test]
fn finite_diff_of_dice_on_4x4() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Tensor::uniform(vec![4, 4], 0.05, 0.95, &mut rng);
    let y = Tensor::uniform(vec![4, 4], 0.0, 1.0, &mut rng).map(|v| (v > 0.5) as u8 as f64);
    let r = finite_diff_check(
        |t, v| {
            let yv = t.constant(y.clone());
            dermseg::losses::dice_loss(t, v, yv)
        },
        &p,
        1e-3,
    )
    .unwrap();
    assert!(r.max_rel_error <= 1e-4);
}

fn chain_gradient(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let x = tape.param(Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng));
    let w = tape.param(Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut rng));
    let a = tape.mul(x, w).unwrap();
    let b = tape.swish(a).unwrap();
    let c = tape.reduce(Reduce::Mean, b, &[1]).unwrap();
    let l = tape.sum_all(c).unwrap();
    let g = tape.backward(l).unwrap();
    let mut out = g.wrt(&tape, x).into_data();
    out.extend(g.wrt(&tape, w).into_data());
    out
}

#[test]
fn rebuilt_tape_gives_bit_identical_gradients() {
    let a = chain_gradient(77);
    let b = chain_gradient(77);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn broadcast_over_trailing_axes() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let b = tape.constant(t(&[3], &[10.0, 20.0, 30.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    let bad = tape.constant(t(&[2], &[1.0, 2.0]));
    assert!(tape.add(a, bad).is_err());
}

proptest! {
    #[test]
    fn add_and_mul_commute_to_the_bit(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..32)) {
        let n = v.len();
        let a = Tensor::new(vec![n], v.iter().map(|p| p.0).collect()).unwrap();
        let b = Tensor::new(vec![n], v.iter().map(|p| p.1).collect()).unwrap();
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a), tape.constant(b));
        let ab = tape.add(av, bv).unwrap();
        let ba = tape.add(bv, av).unwrap();
        let mab = tape.mul(av, bv).unwrap();
        let mba = tape.mul(bv, av).unwrap();
        prop_assert_eq!(tape.value(ab).data(), tape.value(ba).data());
        prop_assert_eq!(tape.value(mab).data(), tape.value(mba).data());
    }

    #[test]
    fn sum_gradient_is_ones_for_any_shape(dims in prop::collection::vec(1usize..4, 1..4)) {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(dims));
        let l = tape.sum_all(x).unwrap();
        let g = tape.backward(l).unwrap();
        prop_assert!(g.wrt(&tape, x).data().iter().all(|&v| v == 1.0));
    }
}

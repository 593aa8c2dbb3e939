//! Confusion counts and the overlap scores derived from them.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count the 2×2 table of `prob ≥ threshold` against a binary truth.
/// Shapes must agree up to unit axes.
pub fn confusion(pred_prob: &Tensor, truth: &Tensor, threshold: f64) -> Result<Confusion> {
    let squeeze = |t: &Tensor| t.shape().iter().copied().filter(|&d| d != 1).collect::<Vec<_>>();
    if squeeze(pred_prob) != squeeze(truth) {
        return Err(Error::shape(format!("{:?} vs {:?}", pred_prob.shape(), truth.shape())));
    }
    let mut c = Confusion::default();
    for (&p, &t) in pred_prob.data().iter().zip(truth.data()) {
        if t != 0.0 && t != 1.0 {
            return Err(Error::InvalidSpec(format!("truth value {t} is not binary")));
        }
        match (p >= threshold, t == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub dice: f64,
    pub jaccard: f64,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
    /// Some score had a 0/0 denominator and was set to 1.
    pub degenerate: bool,
}

impl MetricsRecord {
    pub fn as_array(&self) -> [f64; 5] {
        [self.dice, self.jaccard, self.accuracy, self.sensitivity, self.specificity]
    }
}

pub const SCORE_NAMES: [&str; 5] = ["dice", "jaccard", "accuracy", "sensitivity", "specificity"];

pub fn scores(c: &Confusion) -> MetricsRecord {
    scores_at(c, DEFAULT_THRESHOLD)
}

pub fn scores_at(c: &Confusion, threshold: f64) -> MetricsRecord {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let jaccard = ratio(c.tp, c.tp + c.fp + c.fn_);
    let accuracy = ratio(c.tp + c.tn, c.total());
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    MetricsRecord {
        dice,
        jaccard,
        accuracy,
        sensitivity,
        specificity,
        threshold,
        degenerate,
    }
}

/// Unweighted mean of per-image scores; `None` for an empty set.
pub fn mean_scores(records: &[MetricsRecord]) -> Option<[f64; 5]> {
    if records.is_empty() {
        return None;
    }
    let mut acc = [0.0; 5];
    for r in records {
        for (a, v) in acc.iter_mut().zip(r.as_array()) {
            *a += v;
        }
    }
    Some(acc.map(|a| a / records.len() as f64))
}

/// Tab-separated report: header, one row per image, then a `MEAN` row.
pub fn report_tsv(rows: &[(String, MetricsRecord)]) -> String {
    let mut out = String::from("id\tdice\tjaccard\taccuracy\tsensitivity\tspecificity\tdegenerate\n");
    for (id, r) in rows {
        let [d, j, a, se, sp] = r.as_array();
        let _ = writeln!(out, "{id}\t{d:.6}\t{j:.6}\t{a:.6}\t{se:.6}\t{sp:.6}\t{}", r.degenerate as u8);
    }
    let records: Vec<MetricsRecord> = rows.iter().map(|(_, r)| *r).collect();
    if let Some([d, j, a, se, sp]) = mean_scores(&records) {
        let _ = writeln!(out, "MEAN\t{d:.6}\t{j:.6}\t{a:.6}\t{se:.6}\t{sp:.6}\t");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn crafted_confusion() {
        let r = scores(&Confusion {
            tp: 8,
            fp: 2,
            fn_: 2,
            tn: 88,
        });
        assert!((r.dice - 0.8).abs() <= 1e-12);
        assert!((r.jaccard - 2.0 / 3.0).abs() <= 1e-12);
        assert!((r.accuracy - 0.96).abs() <= 1e-12);
        assert!((r.sensitivity - 0.8).abs() <= 1e-12);
        assert!((r.specificity - 88.0 / 90.0).abs() <= 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let c = confusion(&t, &t, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(scores(&c).as_array(), [1.0; 5]);
    }

    #[test]
    fn all_ones_against_empty_truth_is_all_false_positives() {
        let p = Tensor::ones(vec![4, 4]);
        let t = Tensor::zeros(vec![4, 4]);
        let c = confusion(&p, &t, 0.5).unwrap();
        assert_eq!(c.fp, 16);
        let r = scores(&c);
        assert!(r.degenerate && r.sensitivity == 1.0 && r.dice == 0.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        assert!(confusion(&Tensor::ones(vec![2, 2]), &Tensor::ones(vec![3]), 0.5).is_err());
    }

    #[test]
    fn mean_row_is_order_invariant() {
        let a = scores(&Confusion { tp: 3, fp: 1, tn: 5, fn_: 0 });
        let b = scores(&Confusion { tp: 0, fp: 2, tn: 7, fn_: 1 });
        let x = report_tsv(&[("a".into(), a), ("b".into(), b)]);
        let y = report_tsv(&[("b".into(), b), ("a".into(), a)]);
        assert_eq!(x.lines().last(), y.lines().last());
        assert!(x.lines().last().unwrap().starts_with("MEAN\t"));
    }

    proptest! {
        #[test]
        fn dice_jaccard_identity(tp in 0u64..1000, fp in 0u64..1000, tn in 0u64..1000, fn_ in 0u64..1000) {
            prop_assume!(tp + fp + fn_ > 0);
            let r = scores(&Confusion { tp, fp, tn, fn_ });
            prop_assert!((r.dice - 2.0 * r.jaccard / (1.0 + r.jaccard)).abs() <= 1e-12);
            prop_assert!(r.dice >= r.jaccard);
            for v in r.as_array() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

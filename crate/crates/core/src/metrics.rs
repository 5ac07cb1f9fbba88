//! Confusion-matrix metrics: accuracy, support-weighted recall (WA),
//! per-class F1 and support-weighted F1 (WF1).
//!
//! Empty denominators yield 0. Under support weighting WA reduces to
//! accuracy; both are kept because reports quote both.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub acc: f64,
    pub wa: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub wf1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if confusion.iter().any(|row| row.len() != c) {
            return Err(invalid("confusion matrix must be square"));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::EmptyInput);
        }
        let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
        let predicted: Vec<u64> = (0..c).map(|j| confusion.iter().map(|row| row[j]).sum()).collect();
        let trace: u64 = (0..c).map(|i| confusion[i][i]).sum();

        let mut precision = vec![0.0; c];
        let mut recall = vec![0.0; c];
        let mut f1 = vec![0.0; c];
        let (mut wa, mut wf1) = (0.0, 0.0);
        for k in 0..c {
            let tp = confusion[k][k];
            precision[k] = ratio(tp, predicted[k]);
            recall[k] = ratio(tp, support[k]);
            // 2TP / (2TP + FP + FN) equals the harmonic mean without the 0/0 case.
            f1[k] = ratio(2 * tp, support[k] + predicted[k]);
            let weight = ratio(support[k], total);
            wa += weight * recall[k];
            wf1 += weight * f1[k];
        }
        Ok(Self {
            acc: ratio(trace, total),
            wa,
            precision,
            recall,
            per_class_f1: f1,
            wf1,
            confusion,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Combines shards by summing confusion matrices.
    pub fn merge(&self, other: &Metrics) -> Result<Metrics> {
        if self.num_classes() != other.num_classes() {
            return Err(invalid("cannot merge metrics over different class counts"));
        }
        let confusion = self
            .confusion
            .iter()
            .zip(&other.confusion)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Metrics::from_confusion(confusion)
    }
}

pub fn confusion_matrix(true_labels: &[usize], pred_labels: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if true_labels.len() != pred_labels.len() {
        return Err(Error::ShapeMismatch {
            op: "compute_metrics",
            left: (true_labels.len(), 1),
            right: (pred_labels.len(), 1),
        });
    }
    if true_labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in true_labels.iter().zip(pred_labels) {
        if t >= num_classes || p >= num_classes {
            return Err(invalid(alloc::format!("label out of range for {num_classes} classes")));
        }
        confusion[t][p] += 1;
    }
    Ok(confusion)
}

pub fn compute_metrics(true_labels: &[usize], pred_labels: &[usize], num_classes: usize) -> Result<Metrics> {
    Metrics::from_confusion(confusion_matrix(true_labels, pred_labels, num_classes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_grid(grid: &[&[u64]]) -> Metrics {
        Metrics::from_confusion(grid.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let m = from_grid(&[&[2, 0], &[0, 2]]);
        assert_eq!((m.acc, m.wa, m.wf1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn uniform_confusion() {
        let m = from_grid(&[&[1, 1], &[1, 1]]);
        assert_eq!(m.precision, vec![0.5, 0.5]);
        assert_eq!(m.recall, vec![0.5, 0.5]);
        assert_eq!(m.per_class_f1, vec![0.5, 0.5]);
        assert_eq!((m.acc, m.wf1), (0.5, 0.5));
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let m = compute_metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.acc, 0.5);
        assert_eq!(m.per_class_f1[1], 0.0);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.wf1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.precision[1], 0.0);
    }

    #[test]
    fn errors() {
        assert_eq!(compute_metrics(&[], &[], 3).unwrap_err(), Error::EmptyInput);
        assert!(compute_metrics(&[0], &[0, 1], 3).is_err());
        assert!(compute_metrics(&[3], &[0], 3).is_err());
    }

    #[test]
    fn merge_sums_shards() {
        let a = compute_metrics(&[0, 1, 2], &[0, 2, 2], 3).unwrap();
        let b = compute_metrics(&[1, 1], &[1, 0], 3).unwrap();
        let both = compute_metrics(&[0, 1, 2, 1, 1], &[0, 2, 2, 1, 0], 3).unwrap();
        assert_eq!(a.merge(&b).unwrap(), both);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
            (2usize..=7).prop_flat_map(|c| (Just(c), proptest::collection::vec((0..c, 0..c), 1..200)))
        }

        proptest! {
            #[test]
            fn wa_equals_acc_and_ranges((c, pairs) in labels()) {
                let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let m = compute_metrics(&t, &p, c).unwrap();
                prop_assert!((m.wa - m.acc).abs() < 1e-12);
                for v in [m.acc, m.wa, m.wf1].iter().chain(&m.per_class_f1) {
                    prop_assert!((0.0..=1.0).contains(v));
                }
                prop_assert_eq!(m.total(), t.len() as u64);
            }

            #[test]
            fn wf1_is_relabel_invariant((c, pairs) in labels(), shift in 1usize..7) {
                let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
                let perm = |l: usize| (l + shift) % c;
                let m = compute_metrics(&t, &p, c).unwrap();
                let tp: Vec<_> = t.iter().map(|&l| perm(l)).collect();
                let pp: Vec<_> = p.iter().map(|&l| perm(l)).collect();
                let m2 = compute_metrics(&tp, &pp, c).unwrap();
                prop_assert!((m.wf1 - m2.wf1).abs() < 1e-12);
            }
        }
    }
}

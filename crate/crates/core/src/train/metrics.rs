//! Confusion matrices and the accuracy / UF1 / UAR summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { counts: vec![vec![0; classes]; classes] }
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = ConfusionMatrix::new(classes);
        for (t, p) in pairs {
            m.record(t, p);
        }
        m
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Element-wise sum; both matrices must have the same class count.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes(), other.classes(), "merging confusion matrices of different size");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn metrics(&self) -> Result<Metrics> {
        metrics(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub uf1: f64,
    pub uar: f64,
}

/// Accuracy, unweighted F1 and unweighted average recall. Classes without
/// support or predictions score 0 for recall and F1 and still count in the mean.
pub fn metrics(confusion: &ConfusionMatrix) -> Result<Metrics> {
    let k = confusion.classes();
    let total = confusion.total();
    if total == 0 {
        return Err(Error::UndefinedMetrics);
    }
    let c = &confusion.counts;
    let trace: u64 = (0..k).map(|i| c[i][i]).sum();
    let (mut f1_sum, mut recall_sum) = (0.0, 0.0);
    for i in 0..k {
        let tp = c[i][i] as f64;
        let support: u64 = c[i].iter().sum();
        let predicted: u64 = (0..k).map(|r| c[r][i]).sum();
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        recall_sum += recall;
        if precision + recall > 0.0 {
            f1_sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(Metrics { acc: trace as f64 / total as f64, uf1: f1_sum / k as f64, uar: recall_sum / k as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix { counts: rows.iter().map(|r| r.to_vec()).collect() }
    }

    #[test]
    fn two_class_hand_computation() {
        let m = metrics(&cm(&[&[1, 1], &[0, 2]])).unwrap();
        assert!((m.acc - 0.75).abs() < 1e-12);
        assert!((m.uar - 0.75).abs() < 1e-12);
        // class 0: p = 1, r = 1/2 -> 2/3; class 1: p = 2/3, r = 1 -> 4/5
        assert!((m.uf1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_diagonal() {
        let m = metrics(&cm(&[&[3, 0, 0], &[0, 1, 0], &[0, 0, 5]])).unwrap();
        assert_eq!((m.acc, m.uf1, m.uar), (1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_predictor_on_balanced_pair() {
        let m = metrics(&cm(&[&[4, 0], &[4, 0]])).unwrap();
        assert_eq!(m.uar, 0.5);
        assert_eq!(m.acc, 0.5);
    }

    #[test]
    fn zero_support_class_counts_against_mean() {
        let m = metrics(&cm(&[&[2, 0, 0], &[0, 2, 0], &[0, 0, 0]])).unwrap();
        assert!((m.uar - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.uf1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.acc, 1.0);
    }

    #[test]
    fn empty_matrix_is_undefined() {
        assert!(matches!(metrics(&ConfusionMatrix::new(3)), Err(Error::UndefinedMetrics)));
    }

    proptest! {
        #[test]
        fn relabeling_classes_preserves_metrics(
            counts in proptest::collection::vec(0u64..6, 16),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let k = 4;
            let base = ConfusionMatrix { counts: counts.chunks(k).map(<[u64]>::to_vec).collect() };
            let mut permuted = ConfusionMatrix::new(k);
            for i in 0..k {
                for j in 0..k {
                    permuted.counts[perm[i]][perm[j]] = base.counts[i][j];
                }
            }
            let (a, b) = (metrics(&base).unwrap(), metrics(&permuted).unwrap());
            prop_assert!((a.acc - b.acc).abs() < 1e-12);
            prop_assert!((a.uf1 - b.uf1).abs() < 1e-12);
            prop_assert!((a.uar - b.uar).abs() < 1e-12);
        }

        #[test]
        fn metrics_lie_in_unit_interval(counts in proptest::collection::vec(0u64..9, 9)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let m = metrics(&ConfusionMatrix { counts: counts.chunks(3).map(<[u64]>::to_vec).collect() }).unwrap();
            for v in [m.acc, m.uf1, m.uar] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

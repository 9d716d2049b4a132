//! Accuracy, confusion matrix and per-class precision/recall/F1.

use crate::error::{Error, Result};

/// `counts[t][p]`: rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!("{} true labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Param(format!("label pair ({t}, {p}) outside [0, {num_classes})")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision is `M_cc / column sum`, recall `M_cc / row sum`; a zero
/// denominator yields 0, and so does F1 when `P + R = 0`.
pub fn per_class_prf(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.num_classes())
        .map(|c| {
            let hit = cm.counts[c][c];
            let precision = ratio(hit, cm.col_sum(c));
            let recall = ratio(hit, cm.row_sum(c));
            // Equals 2PR / (P + R), evaluated on counts so it rounds once.
            let f1 = ratio(2 * hit, cm.row_sum(c) + cm.col_sum(c));
            ClassScores { precision, recall, f1 }
        })
        .collect()
}

/// Plain means over classes.
pub fn macro_average(scores: &[ClassScores]) -> ClassScores {
    let n = scores.len().max(1) as f64;
    ClassScores {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
    }
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() {
        return Err(Error::Param("accuracy of an empty set".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!("{} true labels vs {} predictions", y_true.len(), y_pred.len())));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_when_perfect() {
        let cm = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 1]]);
        for s in per_class_prf(&cm) {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn hand_counted_case() {
        let cm = confusion(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 1]]);
        let s = per_class_prf(&cm);
        assert_eq!(s[0].precision, 1.0);
        assert_eq!(s[0].recall, 0.5);
        assert!((s[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[1].precision, 0.5);
        assert_eq!(s[1].recall, 1.0);
        assert!((s[1].f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = confusion(&[0, 1], &[0, 1], 3).unwrap();
        let s = per_class_prf(&cm);
        assert_eq!((s[2].precision, s[2].recall, s[2].f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_and_error_inputs() {
        let cm = confusion(&[], &[], 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[2], &[0], 2).is_err());
        assert!(accuracy(&[], &[]).is_err());
        assert_eq!(accuracy(&[0, 1], &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn accuracy_is_trace_over_total(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..60)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, 4).unwrap();
            prop_assert_eq!(cm.total(), t.len() as u64);
            let acc = accuracy(&t, &p).unwrap();
            prop_assert!((acc - cm.trace() as f64 / cm.total() as f64).abs() < 1e-15);
            for s in per_class_prf(&cm) {
                prop_assert!((0.0..=1.0).contains(&s.precision));
                prop_assert!((0.0..=1.0).contains(&s.recall));
                prop_assert!((0.0..=1.0).contains(&s.f1));
                if s.precision > 0.0 && s.recall > 0.0 {
                    prop_assert!(s.f1 <= s.precision.max(s.recall) + 1e-15);
                    prop_assert!(s.f1 >= s.precision.min(s.recall) - 1e-15);
                }
            }
        }

        #[test]
        fn relabeling_permutes_rows_and_columns(pairs in proptest::collection::vec((0usize..3, 0usize..3), 0..40)) {
            let perm = [2usize, 0, 1];
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let cm = confusion(&t, &p, 3).unwrap();
            let tp: Vec<_> = t.iter().map(|&c| perm[c]).collect();
            let pp: Vec<_> = p.iter().map(|&c| perm[c]).collect();
            let cm2 = confusion(&tp, &pp, 3).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    prop_assert_eq!(cm.counts[a][b], cm2.counts[perm[a]][perm[b]]);
                }
            }
        }
    }
}

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail_validation, Result};

/// Counts with rows = true class and columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub matrix: ConfusionMatrix,
    /// Diagonal over row sum; NaN for classes with no samples.
    pub per_class_accuracy: Vec<f64>,
    pub top1: f64,
    /// Mean of the defined per-class accuracies.
    pub macro_accuracy: f64,
}

impl ConfusionMatrix {
    pub fn from_predictions(preds: &[usize], truths: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != truths.len() {
            bail_validation!("{} predictions for {} labels", preds.len(), truths.len());
        }
        let mut counts = vec![0u64; classes * classes];
        for (&p, &t) in preds.iter().zip(truths) {
            if p >= classes || t >= classes {
                bail_validation!("label pair ({t}, {p}) outside {classes} classes");
            }
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn summary(&self) -> ConfusionSummary {
        let per: Vec<f64> = (0..self.classes)
            .map(|i| match self.row_sum(i) {
                0 => f64::NAN,
                n => self.get(i, i) as f64 / n as f64,
            })
            .collect();
        let defined: Vec<f64> = per.iter().copied().filter(|v| !v.is_nan()).collect();
        let macro_accuracy = if defined.is_empty() { f64::NAN } else { defined.iter().sum::<f64>() / defined.len() as f64 };
        let total = self.total();
        ConfusionSummary {
            matrix: self.clone(),
            top1: if total == 0 { f64::NAN } else { self.trace() as f64 / total as f64 },
            per_class_accuracy: per,
            macro_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submatrix {
    /// Selected classes in selection order.
    pub classes: Vec<usize>,
    /// `counts[i][j]` for the selected classes, row-major.
    pub counts: Vec<u64>,
    pub warning: Option<String>,
}

/// Collects the classes involved in the largest off-diagonal cells (ties by
/// row then column) until `size` distinct classes are found, topping up with
/// the lowest unused indices if errors run out.
pub fn most_confused_submatrix(m: &ConfusionMatrix, size: usize) -> Result<Submatrix> {
    if size > m.classes {
        bail_validation!("submatrix size {size} exceeds {} classes", m.classes);
    }
    let mut cells: Vec<(u64, usize, usize)> = (0..m.classes)
        .flat_map(|i| (0..m.classes).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && m.get(i, j) > 0)
        .map(|(i, j)| (m.get(i, j), i, j))
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut chosen: Vec<usize> = Vec::with_capacity(size);
    for &(_, i, j) in &cells {
        for c in [i, j] {
            if chosen.len() < size && !chosen.contains(&c) {
                chosen.push(c);
            }
        }
        if chosen.len() == size {
            break;
        }
    }
    let warning = if cells.is_empty() {
        Some(String::from("no off-diagonal errors; selected the first classes by index"))
    } else if chosen.len() < size {
        Some(String::from("fewer confused classes than requested; padded by index"))
    } else {
        None
    };
    for c in 0..m.classes {
        if chosen.len() == size {
            break;
        }
        if !chosen.contains(&c) {
            chosen.push(c);
        }
    }
    let counts = chosen.iter().flat_map(|&i| chosen.iter().map(move |&j| m.get(i, j))).collect();
    Ok(Submatrix { classes: chosen, counts, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_example() {
        let m = ConfusionMatrix::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.counts, vec![1, 0, 1, 2]);
        let s = m.summary();
        assert_eq!(s.per_class_accuracy[0], 1.0);
        assert!((s.per_class_accuracy[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.top1, 0.75);
    }

    #[test]
    fn perfect_and_empty_classes() {
        let labels = [0, 1, 2, 2, 1];
        let s = ConfusionMatrix::from_predictions(&labels, &labels, 4).unwrap().summary();
        assert_eq!(&s.per_class_accuracy[..3], &[1.0, 1.0, 1.0]);
        assert!(s.per_class_accuracy[3].is_nan());
        assert_eq!(s.macro_accuracy, 1.0);
        assert!(ConfusionMatrix::from_predictions(&[4], &[0], 4).is_err());
    }

    #[test]
    fn diagonal_falls_back_to_index_order() {
        let labels = [0, 1, 2, 3];
        let m = ConfusionMatrix::from_predictions(&labels, &labels, 4).unwrap();
        let s = most_confused_submatrix(&m, 3).unwrap();
        assert_eq!(s.classes, vec![0, 1, 2]);
        assert!(s.warning.is_some());
        assert!(most_confused_submatrix(&m, 5).is_err());
    }

    #[test]
    fn dominant_error_selected_first() {
        let mut m = ConfusionMatrix { classes: 5, counts: vec![0; 25] };
        m.counts[3 * 5 + 1] = 9;
        m.counts[4] = 1; // row 0, col 4
        let s = most_confused_submatrix(&m, 2).unwrap();
        assert_eq!(s.classes, vec![3, 1]);
        assert_eq!(s.counts, vec![0, 9, 0, 0]);
    }

    #[test]
    fn six_class_ranking() {
        // errors: (2→5)=7, (4→1)=5, (5→2)=5, (0→3)=2, (1→0)=2, (3→4)=1
        let mut m = ConfusionMatrix { classes: 6, counts: vec![0; 36] };
        for i in 0..6 {
            m.counts[i * 7] = 10;
        }
        for (i, j, c) in [(2, 5, 7), (4, 1, 5), (5, 2, 5), (0, 3, 2), (1, 0, 2), (3, 4, 1)] {
            m.counts[i * 6 + j] = c;
        }
        // order: (2,5) → [2,5]; (4,1) → [2,5,4,1]; (5,2) no new; (0,3) → [.., 0, 3]
        assert_eq!(most_confused_submatrix(&m, 4).unwrap().classes, vec![2, 5, 4, 1]);
        assert_eq!(most_confused_submatrix(&m, 5).unwrap().classes, vec![2, 5, 4, 1, 0]);
        let full = most_confused_submatrix(&m, 6).unwrap();
        assert_eq!(full.classes, vec![2, 5, 4, 1, 0, 3]);
        assert!(full.warning.is_none());
        assert_eq!(full.counts[1], 7);
    }

    #[test]
    fn trace_matches_direct_top1() {
        let preds = [0, 2, 1, 1, 3, 0, 2, 2];
        let truth = [0, 1, 1, 1, 3, 2, 2, 0];
        let m = ConfusionMatrix::from_predictions(&preds, &truth, 4).unwrap();
        let direct = preds.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / 8.0;
        assert_eq!(m.summary().top1, direct);
    }

    proptest::proptest! {
        #[test]
        fn trace_over_total_is_top1(pairs in proptest::collection::vec((0usize..6, 0usize..6), 1..80)) {
            let (preds, truth): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let m = ConfusionMatrix::from_predictions(&preds, &truth, 6).unwrap();
            let hits = pairs.iter().filter(|(p, t)| p == t).count();
            proptest::prop_assert_eq!(m.summary().top1, hits as f64 / pairs.len() as f64);
            proptest::prop_assert_eq!(m.total() as usize, pairs.len());
            let sub = most_confused_submatrix(&m, 3).unwrap();
            let mut c = sub.classes.clone();
            c.sort();
            c.dedup();
            proptest::prop_assert_eq!(c.len(), 3);
        }
    }
}

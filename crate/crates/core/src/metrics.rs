//! Classification metrics: accuracy, per-class and macro precision/recall/F1,
//! and the confusion matrix.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::EmotionSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// Rows are true labels, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(Error::shape("confusion matrix", truth.len(), predicted.len()));
    }
    let mut m = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::Argument(format!("class index {} outside {classes} classes", t.max(p))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn evaluate_predictions(truth: &[usize], predicted: &[usize], set: &EmotionSet) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let k = set.len();
    let confusion = confusion_matrix(truth, predicted, k)?;
    let total = truth.len();
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted_c);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics { label: set.labels()[c].clone(), precision, recall, f1, support }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(Metrics {
        accuracy: ratio(correct, total),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        confusion,
        total,
    })
}

/// Index of the largest entry of each `classes`-wide row; first wins on ties.
pub fn argmax_rows(probs: &[f64], classes: usize) -> Vec<usize> {
    probs
        .chunks(classes)
        .map(|row| {
            row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect()
}

impl Metrics {
    pub fn write_confusion_csv(&self, path: &Path, set: &EmotionSet) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(set.labels().iter().cloned());
        w.write_record(&header)?;
        for (label, row) in set.labels().iter().zip(&self.confusion) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Binary PGM with `cell`-pixel squares; darker means more samples.
    pub fn write_confusion_pgm(&self, path: &Path, cell: usize) -> Result<()> {
        let k = self.confusion.len();
        let side = k * cell;
        let peak = self.confusion.iter().flatten().copied().max().unwrap_or(0).max(1);
        let mut bytes = format!("P5\n{side} {side}\n255\n").into_bytes();
        for y in 0..side {
            for x in 0..side {
                let v = self.confusion[y / cell][x / cell];
                bytes.push(255 - (v * 255 / peak) as u8);
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> EmotionSet {
        EmotionSet::new(vec!["pos".into(), "neg".into()]).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let set = EmotionSet::preset(5).unwrap();
        let y = vec![0, 1, 2, 3, 4, 4, 2];
        let m = evaluate_predictions(&y, &y, &set).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.per_class.iter().all(|c| c.f1 == 1.0));
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(i == j || v == 0);
            }
        }
    }

    #[test]
    fn binary_hand_example() {
        // class 0 is positive: TP=3, FN=2, FP=1, TN=4
        let truth = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let pred = [0, 0, 0, 1, 1, 0, 1, 1, 1, 1];
        let m = evaluate_predictions(&truth, &pred, &two()).unwrap();
        let pos = &m.per_class[0];
        assert!((pos.precision - 0.75).abs() < 1e-12);
        assert!((pos.recall - 0.6).abs() < 1e-12);
        assert!((pos.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(evaluate_predictions(&[], &[], &two()).is_err());
    }

    #[test]
    fn argmax_ties_pick_first() {
        assert_eq!(argmax_rows(&[0.5, 0.5, 0.1, 0.9], 2), vec![0, 1]);
    }
}

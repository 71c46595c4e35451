//! Confusion matrices and classification metrics.
//!
//! Per-class values are computed from integer counts with a single division
//! each (`f1 = 2tp / (2tp + fp + fn)`, the harmonic mean of precision and
//! recall in closed form), so they are the correctly rounded values of the
//! exact fractions. Any 0/0 is reported as 0 and sets `degenerate`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{write_png, RasterImage};
use crate::record::ArrhythmiaClass;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// Builds an `n_classes` confusion matrix from label indices.
pub fn confusion_indices(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::domain(format!(
            "label lists differ in length: {} true vs {} predicted",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::domain(format!("label index out of range: {t} / {p}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

pub fn confusion(truth: &[ArrhythmiaClass], predicted: &[ArrhythmiaClass]) -> Result<ConfusionMatrix> {
    let t: Vec<usize> = truth.iter().map(|c| c.index()).collect();
    let p: Vec<usize> = predicted.iter().map(|c| c.index()).collect();
    confusion_indices(&t, &p, ArrhythmiaClass::COUNT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Set when some ratio was 0/0 (or the matrix is empty).
    pub degenerate: bool,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let n = cm.n_classes();
    let total = cm.total();
    let mut degenerate = total == 0;
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for c in 0..n {
        let tp = cm.counts[c][c];
        let (row, col) = (cm.row_sum(c), cm.col_sum(c));
        precision.push(ratio(tp, col, &mut degenerate));
        recall.push(ratio(tp, row, &mut degenerate));
        f1.push(ratio(2 * tp, row + col, &mut degenerate));
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let accuracy = ratio(cm.trace(), total, &mut degenerate);
    MetricsReport {
        accuracy,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        // single-label: micro precision = micro recall = accuracy
        micro_f1: accuracy,
        precision,
        recall,
        f1,
        support: (0..n).map(|c| cm.row_sum(c)).collect(),
        degenerate,
        confusion: cm.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample (n - 1) standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub folds: usize,
    pub accuracy: MeanStd,
    pub macro_precision: MeanStd,
    pub macro_recall: MeanStd,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateReport {
    let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    AggregateReport {
        folds: reports.len(),
        accuracy: pick(|r| r.accuracy),
        macro_precision: pick(|r| r.macro_precision),
        macro_recall: pick(|r| r.macro_recall),
        macro_f1: pick(|r| r.macro_f1),
        micro_f1: pick(|r| r.micro_f1),
    }
}

/// Aligned text table with one row per system: System, Accuracy, F1 score.
pub fn render_table(rows: &[(String, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(s, _)| s.len()).max().unwrap_or(0).max("System".len());
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "System", "Accuracy", "F1 score");
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}%  {:>8.4}",
            name,
            100.0 * r.accuracy,
            r.macro_f1
        );
    }
    out
}

/// Per-class breakdown followed by the confusion matrix.
pub fn render_details(r: &MetricsReport) -> String {
    let names: Vec<String> = (0..r.precision.len())
        .map(|c| ArrhythmiaClass::from_index(c).map_or(c.to_string(), |k| k.to_string()))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<6} {:>9} {:>9} {:>9} {:>8}",
        "class", "precision", "recall", "f1", "support"
    );
    for (c, name) in names.iter().enumerate() {
        let _ = writeln!(
            out,
            "{:<6} {:>9.4} {:>9.4} {:>9.4} {:>8}",
            name, r.precision[c], r.recall[c], r.f1[c], r.support[c]
        );
    }
    let _ = writeln!(
        out,
        "accuracy {:.4}  macro-F1 {:.4}  micro-F1 {:.4}",
        r.accuracy, r.macro_f1, r.micro_f1
    );
    let _ = write!(out, "{:<6}", "");
    for name in &names {
        let _ = write!(out, " {name:>6}");
    }
    let _ = writeln!(out);
    for (c, row) in r.confusion.counts.iter().enumerate() {
        let _ = write!(out, "{:<6}", names[c]);
        for v in row {
            let _ = write!(out, " {v:>6}");
        }
        let _ = writeln!(out);
    }
    out
}

/// Heat grid of the matrix, darker cells holding larger counts.
pub fn confusion_image(cm: &ConfusionMatrix, cell: usize) -> RasterImage {
    let n = cm.n_classes();
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let mut img = RasterImage::new(n * cell + 1, n * cell + 1, 255);
    for (t, row) in cm.counts.iter().enumerate() {
        for (p, &v) in row.iter().enumerate() {
            let shade = 255 - (255 * v / max) as u8;
            for y in t * cell + 1..(t + 1) * cell {
                for x in p * cell + 1..(p + 1) * cell {
                    img.set(x, y, shade);
                }
            }
        }
    }
    // grid lines
    for i in 0..=n {
        for j in 0..img.width {
            img.set(j, i * cell, 128);
            img.set(i * cell, j, 128);
        }
    }
    img
}

pub fn write_confusion_png(cm: &ConfusionMatrix, path: &Path) -> Result<()> {
    write_png(&confusion_image(cm, 40), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 4, 3];
        let cm = confusion_indices(&labels, &labels, 5).unwrap();
        assert_eq!(cm.trace(), 6);
        assert_eq!(metrics(&cm).accuracy, 1.0);
    }

    #[test]
    fn two_class_counts() {
        let cm = confusion_indices(&[0, 0, 0, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 1], vec![0, 1]]);
    }

    #[test]
    fn length_mismatch() {
        assert!(confusion_indices(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn empty_is_degenerate_zero() {
        let cm = confusion(&[], &[]).unwrap();
        let r = metrics(&cm);
        assert!(r.degenerate);
        assert_eq!(r.accuracy, 0.0);
        assert!(r.f1.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_precision_recall() {
        // tp = 9, fp = 1, fn = 1
        let cm = ConfusionMatrix {
            counts: vec![vec![9, 1], vec![1, 0]],
        };
        let r = metrics(&cm);
        assert!((r.precision[0] - 0.9).abs() < 1e-15);
        assert!((r.recall[0] - 0.9).abs() < 1e-15);
        assert!((r.f1[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn unused_class_flags_degenerate() {
        let cm = ConfusionMatrix {
            counts: vec![vec![3, 0, 0], vec![1, 2, 0], vec![0, 0, 0]],
        };
        let r = metrics(&cm);
        assert!(r.degenerate);
        assert_eq!((r.precision[2], r.recall[2], r.f1[2]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn constant_predictor_on_balanced_data() {
        let truth: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let cm = confusion_indices(&truth, &[0; 50], 5).unwrap();
        let r = metrics(&cm);
        assert!((r.accuracy - 0.2).abs() < 1e-15);
        assert!((r.macro_recall - 0.2).abs() < 1e-15);
    }

    #[test]
    fn aggregate_of_identical_folds() {
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 0], vec![1, 1]],
        };
        let r = metrics(&cm);
        let agg = aggregate(&vec![r.clone(); 10]);
        assert_eq!(agg.folds, 10);
        assert_eq!(agg.accuracy.mean, 0.75);
        assert_eq!(agg.accuracy.std, 0.0);
    }

    #[test]
    fn table_layout() {
        let cm = ConfusionMatrix {
            counts: vec![vec![2, 0], vec![1, 1]],
        };
        let r = metrics(&cm);
        let t = render_table(&[("CNN1D+GRU".into(), &r)]);
        assert!(t.starts_with("System"));
        assert!(t.contains("75.00%"));
        assert!(t.contains("0.7333"));
    }
}

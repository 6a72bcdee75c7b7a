//! Confusion matrix and per-class precision / recall / F1.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{SeverityLabel, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class {0} out of range")]
    ClassOutOfRange(usize),
    #[error("confusion matrix is empty")]
    Empty,
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= NUM_CLASSES {
            return Err(MetricsError::ClassOutOfRange(p));
        }
        if t >= NUM_CLASSES {
            return Err(MetricsError::ClassOutOfRange(t));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: SeverityLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No segment was predicted as this class; precision reported as 0.
    pub precision_undefined: bool,
    /// No segment of this class was evaluated; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub accuracy: f64,
    /// Mean cross-entropy when known.
    pub loss: Option<f64>,
    pub total: u64,
    pub classes: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::Empty);
    }
    let classes = SeverityLabel::ALL
        .iter()
        .map(|&class| {
            let c = class.index();
            let tp = cm.counts[c][c];
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(c));
            let (recall, recall_undefined) = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                class,
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    Ok(ClassReport {
        accuracy: cm.trace() as f64 / total as f64,
        loss: None,
        total,
        classes,
        confusion: *cm,
    })
}

impl ClassReport {
    pub fn with_loss(mut self, loss: f64) -> Self {
        self.loss = Some(loss);
        self
    }

    /// Accuracy / loss line followed by one precision / recall / F1 row per
    /// class, four decimals.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let loss = self.loss.map_or("-".to_string(), |l| format!("{l:.4}"));
        writeln!(s, "Accuracy  {:.4}   Loss  {loss}   Segments  {}", self.accuracy, self.total).unwrap();
        writeln!(s, "{:<6}{:>10}{:>10}{:>10}{:>10}", "Class", "Precision", "Recall", "F1-Score", "Support").unwrap();
        for c in &self.classes {
            writeln!(
                s,
                "{:<6}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                c.class.code(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )
            .unwrap();
        }
        s
    }

    /// True-vs-predicted count grid.
    pub fn confusion_table(&self) -> String {
        let mut s = String::new();
        write!(s, "{:<12}", "True\\Pred").unwrap();
        for l in SeverityLabel::ALL {
            write!(s, "{:>8}", l.code()).unwrap();
        }
        s.push('\n');
        for t in SeverityLabel::ALL {
            write!(s, "{:<12}", t.code()).unwrap();
            for p in SeverityLabel::ALL {
                write!(s, "{:>8}", self.confusion.counts[t.index()][p.index()]).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

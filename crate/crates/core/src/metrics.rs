//! Confusion matrices and the accuracy / precision / recall / F1 report.
//!
//! Binary reports use class 1 ("fake") as the positive class for the
//! headline precision, recall and F1. Multiclass reports use macro averages
//! as the headline; weighted averages and per-class one-vs-rest values are
//! always included. Undefined ratios (zero denominators) are 0.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const POSITIVE_CLASS: usize = 1;

/// Rows are true labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            n: num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_pairs(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut m = ConfusionMatrix::new(num_classes);
        for (&p, &t) in predictions.iter().zip(labels) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.n || predicted >= self.n {
            return Err(Error::Contract(format!(
                "pair (truth {truth}, predicted {predicted}) outside {} classes",
                self.n
            )));
        }
        self.counts[truth * self.n + predicted] += 1;
        Ok(())
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::Contract(format!("cannot merge {}-class and {}-class matrices", self.n, other.n)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// One-vs-rest `(tp, fp, tn, fn)` for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(c, c);
        let fp = (0..self.n).filter(|&t| t != c).map(|t| self.get(t, c)).sum();
        let fn_ = (0..self.n).filter(|&p| p != c).map(|p| self.get(c, p)).sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, tn, fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub accuracy: f64,
    /// Positive-class value for binary tasks, macro average otherwise.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_avg: Averages,
    pub weighted: Averages,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix, class_names: &[String]) -> Result<Self> {
        let n = confusion.num_classes();
        if class_names.len() != n {
            return Err(Error::Contract(format!("{} class names for {n} classes", class_names.len())));
        }
        let total = confusion.total();
        if total == 0 {
            return Err(Error::Empty("evaluation split"));
        }
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|c| {
                let (tp, fp, _, fn_) = confusion.one_vs_rest(c);
                let precision = ratio(tp, tp + fp);
                let recall = ratio(tp, tp + fn_);
                ClassMetrics {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support: tp + fn_,
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n as f64;
        let weighted = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        };
        let macro_avg = Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        };
        let weighted = Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        };
        let (precision, recall, f1) = if n == 2 {
            let p = &per_class[POSITIVE_CLASS];
            (p.precision, p.recall, p.f1)
        } else {
            (macro_avg.precision, macro_avg.recall, macro_avg.f1)
        };
        Ok(MetricsReport {
            class_names: class_names.to_vec(),
            accuracy: ratio(confusion.trace(), total),
            precision,
            recall,
            f1,
            macro_avg,
            weighted,
            per_class,
            confusion,
        })
    }

    pub fn is_binary(&self) -> bool {
        self.class_names.len() == 2
    }

    /// Model-selection score: F1 for binary tasks, accuracy otherwise.
    pub fn selection_score(&self) -> f64 {
        if self.is_binary() {
            self.f1
        } else {
            self.accuracy
        }
    }

    /// `scope,class,support,Acc,Prec,Rec,F1` rows: the headline
    /// (`binary` or `macro`), `macro`, `weighted`, then one `class` row each.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,class,support,Acc,Prec,Rec,F1\n");
        let total = self.confusion.total();
        let mut row = |scope: &str, class: &str, support: u64, acc: Option<f64>, p: f64, r: f64, f: f64| {
            let acc = acc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{scope},{class},{support},{acc},{p},{r},{f}");
        };
        if self.is_binary() {
            let pos = &self.class_names[POSITIVE_CLASS];
            row("binary", pos, total, Some(self.accuracy), self.precision, self.recall, self.f1);
        }
        let m = self.macro_avg;
        row("macro", "", total, Some(self.accuracy), m.precision, m.recall, m.f1);
        let w = self.weighted;
        row("weighted", "", total, Some(self.accuracy), w.precision, w.recall, w.f1);
        for (name, c) in self.class_names.iter().zip(&self.per_class) {
            row("class", name, c.support, None, c.precision, c.recall, c.f1);
        }
        out
    }

    /// Confusion matrix with a `truth` column and one column per predicted class.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("truth");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (t, name) in self.class_names.iter().enumerate() {
            out.push_str(name);
            for p in 0..self.class_names.len() {
                let _ = write!(out, ",{}", self.confusion.get(t, p));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, metrics_path: &Path, confusion_path: &Path) -> Result<()> {
        std::fs::write(metrics_path, self.to_csv()).map_err(|e| Error::io(metrics_path, e))?;
        std::fs::write(confusion_path, self.confusion_csv()).map_err(|e| Error::io(confusion_path, e))
    }
}

pub fn evaluate_predictions(predictions: &[usize], labels: &[usize], class_names: &[String]) -> Result<MetricsReport> {
    let confusion = ConfusionMatrix::from_pairs(predictions, labels, class_names.len())?;
    MetricsReport::from_confusion(confusion, class_names)
}

//! Confusion matrices, one-vs-rest rates and fold aggregation.

use std::fmt::Write as _;

use crate::data::Class;
use crate::error::{Error, Result};

/// 3×3 counts; rows are true classes, columns predicted classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.trace() as f64 / n as f64)
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for i in 0..3 {
            for j in 0..3 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

pub fn confusion(preds: &[Class], labels: &[Class]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, l) in preds.iter().zip(labels) {
        cm.counts[l.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// One-vs-rest rates in percent; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassMetrics {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

impl ClassMetrics {
    pub fn values(&self) -> [Option<f64>; 4] {
        [self.tpr, self.tnr, self.ppv, self.npv]
    }

    fn from_values(v: [Option<f64>; 4]) -> Self {
        ClassMetrics {
            tpr: v[0],
            tnr: v[1],
            ppv: v[2],
            npv: v[3],
        }
    }
}

pub const METRIC_NAMES: [&str; 4] = ["TPR", "TNR", "PPV", "NPV"];

fn percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Metrics of a single evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldMetrics {
    pub confusion: ConfusionMatrix,
    pub per_class: [ClassMetrics; 3],
    pub accuracy: f64,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<FoldMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("confusion matrix is empty"));
    }
    let per_class = std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let row: u64 = cm.counts[c].iter().sum();
        let col: u64 = (0..3).map(|r| cm.counts[r][c]).sum();
        let (fn_, fp) = (row - tp, col - tp);
        let tn = total - tp - fn_ - fp;
        ClassMetrics {
            tpr: percent(tp, tp + fn_),
            tnr: percent(tn, tn + fp),
            ppv: percent(tp, tp + fp),
            npv: percent(tn, tn + fn_),
        }
    });
    Ok(FoldMetrics {
        confusion: *cm,
        per_class,
        accuracy: cm.trace() as f64 / total as f64,
    })
}

/// Per-fold metrics, their unweighted means (undefined entries excluded)
/// and the metrics of the pooled confusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub mean: [ClassMetrics; 3],
    pub mean_accuracy: f64,
    pub pooled: FoldMetrics,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::contract("no folds to aggregate"));
        }
        let mean = std::array::from_fn(|c| {
            ClassMetrics::from_values(std::array::from_fn(|m| {
                let defined: Vec<f64> = folds.iter().filter_map(|f| f.per_class[c].values()[m]).collect();
                (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
            }))
        });
        let mean_accuracy = folds.iter().map(|f| f.accuracy).sum::<f64>() / folds.len() as f64;
        let mut pooled = ConfusionMatrix::default();
        for f in &folds {
            pooled.add(&f.confusion);
        }
        Ok(MetricsReport {
            mean,
            mean_accuracy,
            pooled: per_class_metrics(&pooled)?,
            folds,
        })
    }

    /// Classes × {TPR, TNR, PPV, NPV} tables for fold means and the pooled
    /// confusion matrix.
    pub fn to_table(&self, title: &str) -> String {
        let mut out = String::new();
        writeln!(out, "{title}").expect("string write");
        writeln!(out, "folds: {}", self.folds.len()).expect("string write");
        write_table(&mut out, "mean over folds", &self.mean);
        writeln!(out, "mean accuracy: {}", fmt_pct(Some(100.0 * self.mean_accuracy))).expect("string write");
        write_table(&mut out, "pooled confusion", &self.pooled.per_class);
        writeln!(out, "pooled accuracy: {}", fmt_pct(Some(100.0 * self.pooled.accuracy))).expect("string write");
        writeln!(out, "\npooled confusion matrix (rows true, cols predicted)").expect("string write");
        writeln!(out, "{:<6}{:>8}{:>8}{:>8}", "", "MSA", "PSP", "PD").expect("string write");
        for c in Class::ALL {
            let r = self.pooled.confusion.counts[c.index()];
            writeln!(out, "{:<6}{:>8}{:>8}{:>8}", c.name(), r[0], r[1], r[2]).expect("string write");
        }
        out
    }

    /// `key=value` lines; undefined metrics are written as `undefined`.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: String, v: String| writeln!(out, "{k}={v}").expect("string write");
        kv("folds".into(), self.folds.len().to_string());
        kv("mean.accuracy".into(), format!("{:.6}", self.mean_accuracy));
        kv("pooled.accuracy".into(), format!("{:.6}", self.pooled.accuracy));
        for c in Class::ALL {
            for (m, name) in METRIC_NAMES.iter().enumerate() {
                kv(format!("mean.{c}.{name}"), fmt_kv(self.mean[c.index()].values()[m]));
                kv(format!("pooled.{c}.{name}"), fmt_kv(self.pooled.per_class[c.index()].values()[m]));
            }
        }
        for (i, f) in self.folds.iter().enumerate() {
            kv(format!("fold{i}.accuracy"), format!("{:.6}", f.accuracy));
            for c in Class::ALL {
                for (m, name) in METRIC_NAMES.iter().enumerate() {
                    kv(format!("fold{i}.{c}.{name}"), fmt_kv(f.per_class[c.index()].values()[m]));
                }
            }
            let cells: Vec<String> = f.confusion.counts.iter().flatten().map(u64::to_string).collect();
            kv(format!("fold{i}.confusion"), cells.join(","));
        }
        out
    }
}

fn write_table(out: &mut String, label: &str, rows: &[ClassMetrics; 3]) {
    writeln!(out, "\n[{label}]").expect("string write");
    writeln!(out, "{:<6}{:>10}{:>10}{:>10}{:>10}", "class", "TPR", "TNR", "PPV", "NPV").expect("string write");
    for c in Class::ALL {
        let m = rows[c.index()];
        writeln!(
            out,
            "{:<6}{:>10}{:>10}{:>10}{:>10}",
            c.name(),
            fmt_pct(m.tpr),
            fmt_pct(m.tnr),
            fmt_pct(m.ppv),
            fmt_pct(m.npv)
        )
        .expect("string write");
    }
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.2}"))
}

fn fmt_kv(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |x| format!("{x:.6}"))
}

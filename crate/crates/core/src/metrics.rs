//! Confusion matrices, accuracy/TPR/TNR/PPV, run averaging and the
//! shrink/scale/reference comparison table.
//!
//! Percentages are reported with two decimals, rounded half away from
//! zero (58/64 = 90.625% prints as 90.63%). Run averages are taken over
//! the reported two-decimal values, which is how the per-run and average
//! rows of a results table stay consistent with each other.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::Verdict;

/// Counts with `Erroneous` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Actual positives.
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    /// Actual negatives.
    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

pub fn confusion(predictions: &[Verdict], truth: &[Verdict]) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Metrics(format!(
            "{} predictions for {} ground-truth labels",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Metrics("no predictions".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        match (p, t) {
            (Verdict::Erroneous, Verdict::Erroneous) => cm.tp += 1,
            (Verdict::Faultless, Verdict::Faultless) => cm.tn += 1,
            (Verdict::Erroneous, Verdict::Faultless) => cm.fp += 1,
            (Verdict::Faultless, Verdict::Erroneous) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Metric values as fractions in [0, 1]; `None` where the denominator is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub accuracy: Option<f64>,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub max_validation_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::Metrics("empty confusion matrix".into()));
    }
    Ok(MetricsReport {
        run_id: String::new(),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        tpr: ratio(cm.tp, cm.positives()),
        tnr: ratio(cm.tn, cm.negatives()),
        ppv: ratio(cm.tp, cm.tp + cm.fp),
        max_validation_accuracy: None,
        confusion: Some(*cm),
    })
}

/// A fraction as hundredths of a percent, rounded half away from zero.
pub fn centi_percent(fraction: f64) -> i64 {
    (fraction * 10_000.0).round() as i64
}

/// `0.90625` → `"90.63%"`; `None` → `"n/a"`.
pub fn format_percent(fraction: Option<f64>) -> String {
    match fraction {
        Some(f) => {
            let c = centi_percent(f);
            format!("{}.{:02}%", c / 100, (c % 100).abs())
        }
        None => "n/a".to_string(),
    }
}

/// Unweighted mean of each metric over runs, taken on the two-decimal
/// percentages each run reports.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Metrics("no runs to aggregate".into()));
    }
    let mean = |name: &str, get: fn(&MetricsReport) -> Option<f64>| -> Result<f64> {
        let mut total = 0i64;
        for r in reports {
            let v = get(r).ok_or_else(|| Error::Metrics(format!("run {:?} has undefined {name}", r.run_id)))?;
            total += centi_percent(v);
        }
        Ok(total as f64 / reports.len() as f64 / 10_000.0)
    };
    let max_val = if reports.iter().all(|r| r.max_validation_accuracy.is_some()) {
        Some(mean("max validation accuracy", |r| r.max_validation_accuracy)?)
    } else {
        None
    };
    Ok(MetricsReport {
        run_id: "average".into(),
        accuracy: Some(mean("accuracy", |r| r.accuracy)?),
        tpr: Some(mean("TPR", |r| r.tpr)?),
        tnr: Some(mean("TNR", |r| r.tnr)?),
        ppv: Some(mean("PPV", |r| r.ppv)?),
        max_validation_accuracy: max_val,
        confusion: None,
    })
}

/// Per-run rows plus the average row, aligned for a terminal.
pub fn runs_table(reports: &[MetricsReport], average: Option<&MetricsReport>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>16} {:>10} {:>10} {:>10} {:>10}",
        "", "Max. val. acc.", "Test acc.", "TPR", "TNR", "PPV"
    );
    for r in reports.iter().chain(average) {
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>10} {:>10} {:>10} {:>10}",
            r.run_id,
            format_percent(r.max_validation_accuracy),
            format_percent(r.accuracy),
            format_percent(r.tpr),
            format_percent(r.tnr),
            format_percent(r.ppv)
        );
    }
    out
}

/// Reference-system figures loaded from a JSON baseline file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBaseline {
    pub name: String,
    pub accuracy: f64,
    pub tpr: f64,
    pub tnr: f64,
    pub ppv: f64,
}

impl ReferenceBaseline {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            run_id: self.name.clone(),
            accuracy: Some(self.accuracy),
            tpr: Some(self.tpr),
            tnr: Some(self.tnr),
            ppv: Some(self.ppv),
            max_validation_accuracy: None,
            confusion: None,
        }
    }
}

/// Shipped figures of the rule-based AOI reference system.
pub const AOI_REFERENCE_JSON: &str = include_str!("../fixtures/aoi_reference.json");

pub fn aoi_reference() -> ReferenceBaseline {
    serde_json::from_str(AOI_REFERENCE_JSON).expect("fixture is valid JSON")
}

/// Three-column Accuracy/TPR/TNR/PPV table. A missing reference is shown
/// as unavailable.
pub fn comparison_table(shrunk: &MetricsReport, scaled: &MetricsReport, reference: Option<&MetricsReport>) -> String {
    let headers = ["shrunk scans", "scaled scans", "reference system"];
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>16} {:>16} {:>18}", "", headers[0], headers[1], headers[2]);
    type Cell = fn(&MetricsReport) -> Option<f64>;
    let rows: [(&str, Cell); 4] = [
        ("Accuracy", |r| r.accuracy),
        ("TPR", |r| r.tpr),
        ("TNR", |r| r.tnr),
        ("PPV", |r| r.ppv),
    ];
    for (name, get) in rows {
        let reference_cell = reference.map_or_else(|| "unavailable".to_string(), |r| format_percent(get(r)));
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>18}",
            name,
            format_percent(get(shrunk)),
            format_percent(get(scaled)),
            reference_cell
        );
    }
    out
}

/// Report with the highest test accuracy (first on ties).
pub fn best_run(reports: &[MetricsReport]) -> Option<&MetricsReport> {
    reports.iter().fold(None, |best: Option<&MetricsReport>, r| match best {
        Some(b) if b.accuracy.unwrap_or(-1.0) >= r.accuracy.unwrap_or(-1.0) => Some(b),
        _ => Some(r),
    })
}

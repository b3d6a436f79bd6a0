//! Confusion matrices, classification reports and the files a run writes.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::fairness::{FairnessReport, MetricEntry};
use crate::model::{GridOutcome, ModelParams, TrainedModel};
use crate::reweight::Interaction;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("confusion matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NonSquare { rows: usize, row: usize, cols: usize },
    #[error("label count {labels} does not match matrix size {size}")]
    LabelMismatch { labels: usize, size: usize },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], labels: &[String]) -> Self {
        let k = labels.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in y_true.iter().zip(y_pred) {
            counts[t][p] += 1;
        }
        Self {
            labels: labels.to_vec(),
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub support: u64,
    pub notes: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class precision, recall, F1 and support. A zero denominator yields
/// 0.00 and a note naming the class.
pub fn classification_report(counts: &[Vec<u64>], labels: &[String]) -> Result<ClassificationReport, ReportError> {
    let k = counts.len();
    if let Some((row, r)) = counts.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(ReportError::NonSquare {
            rows: k,
            row,
            cols: r.len(),
        });
    }
    if labels.len() != k {
        return Err(ReportError::LabelMismatch {
            labels: labels.len(),
            size: k,
        });
    }
    let mut notes = Vec::new();
    let mut classes = Vec::with_capacity(k);
    let total: u64 = counts.iter().flatten().sum();
    for c in 0..k {
        let tp = counts[c][c];
        let support: u64 = counts[c].iter().sum();
        let predicted: u64 = counts.iter().map(|r| r[c]).sum();
        let precision = ratio(tp, predicted).unwrap_or_else(|| {
            notes.push(format!("class {}: no predictions, precision set to 0.00", labels[c]));
            0.0
        });
        let recall = ratio(tp, support).unwrap_or_else(|| {
            notes.push(format!("class {}: no true samples, recall set to 0.00", labels[c]));
            0.0
        });
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes.push(ClassMetrics {
            label: labels[c].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    let trace: u64 = (0..k).map(|i| counts[i][i]).sum();
    let avg = |w: &dyn Fn(&ClassMetrics) -> f64, norm: f64| Averages {
        precision: classes.iter().map(|c| w(c) * c.precision).sum::<f64>() / norm,
        recall: classes.iter().map(|c| w(c) * c.recall).sum::<f64>() / norm,
        f1: classes.iter().map(|c| w(c) * c.f1).sum::<f64>() / norm,
    };
    let macro_avg = avg(&|_| 1.0, k.max(1) as f64);
    let weighted_avg = avg(&|c| c.support as f64, total.max(1) as f64);
    Ok(ClassificationReport {
        accuracy: ratio(trace, total).unwrap_or(0.0),
        classes,
        macro_avg,
        weighted_avg,
        support: total,
        notes,
    })
}

/// One row of the layer table printed for a trained network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerSummary {
    pub layer: String,
    pub units: usize,
    pub params: usize,
}

pub fn mlp_summary(model: &TrainedModel) -> Option<Vec<LayerSummary>> {
    let TrainedModel::Mlp(m) = model else {
        return None;
    };
    let names = ["dense_1", "dense_2", "output"];
    Some(
        m.model
            .layers
            .iter()
            .zip(names)
            .map(|(l, name)| LayerSummary {
                layer: name.to_string(),
                units: l.bias.len(),
                params: l.weights.n_rows() * l.weights.n_cols() + l.bias.len(),
            })
            .collect(),
    )
}

/// Evaluation of one trained model on the test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub params: ModelParams,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub classification: ClassificationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSummary>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DataSummary {
    pub rows_loaded: usize,
    pub rows_after_filters: usize,
    pub rows_used: usize,
    pub features: Vec<String>,
    pub encoded_columns: usize,
    pub class_labels: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub train_class_counts: Vec<usize>,
    pub balanced_class_counts: Vec<usize>,
    pub synthetic_rows: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WeightSummary {
    pub mode: String,
    pub tested: usize,
    pub significant: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// How matching interaction probabilities combine into a weight.
    pub combination: String,
    pub interactions: Vec<Interaction>,
}

/// Counts of each sensitive bucket by target class over the cleaned data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrequencyRow {
    pub attribute: String,
    pub bucket: String,
    pub privileged: bool,
    pub class: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    /// `ok` or `failed_at_<stage>`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub data: DataSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best: Option<Evaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pre_audit: Option<FairnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reweighting: Option<WeightSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weighted: Option<Evaluation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub post_audit: Option<FairnessReport>,
    pub frequencies: Vec<FrequencyRow>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            status: "ok".into(),
            error: None,
            config,
            data: DataSummary::default(),
            grid: None,
            best: None,
            pre_audit: None,
            reweighting: None,
            weighted: None,
            post_audit: None,
            frequencies: Vec::new(),
        }
    }
}

/// Wall-clock seconds per stage, kept out of report.json so that file stays
/// reproducible.
pub type Timings = BTreeMap<String, f64>;

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else if v > 0.0 {
        "+inf".into()
    } else {
        "nan".into()
    }
}

fn write_fairness_rows<W: io::Write>(
    w: &mut csv::Writer<W>,
    stage: &str,
    report: &FairnessReport,
) -> Result<(), ReportError> {
    for (attr, metric, entry) in report.rows() {
        match entry {
            MetricEntry::Computed(r) => {
                let scope = serde_json::to_value(r.scope)?;
                w.write_record([
                    stage,
                    attr,
                    metric,
                    scope.as_str().unwrap_or_default(),
                    &fmt_value(r.value),
                    &r.threshold.to_string(),
                    &r.verdict.to_string(),
                    &fmt_opt(r.max_fair_threshold),
                    "",
                ])?;
            }
            MetricEntry::Skipped { skipped } => {
                w.write_record([stage, attr, metric, "", "", "", "", "", skipped.as_str()])?;
            }
        }
    }
    Ok(())
}

/// Flattens fairness sections into CSV; header only when there are none.
pub fn fairness_csv(sections: &[(&str, &FairnessReport)]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "stage",
        "attribute",
        "metric",
        "scope",
        "value",
        "threshold",
        "verdict",
        "max_fair_threshold",
        "skipped",
    ])?;
    for (stage, r) in sections {
        write_fairness_rows(&mut w, stage, r)?;
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String, ReportError> {
    let bytes = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn grid_csv(grid: Option<&GridOutcome>) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "family", "params", "accuracy", "status", "best"])?;
    if let Some(g) = grid {
        for c in &g.cells {
            let status = serde_json::to_value(c.status)?;
            w.write_record([
                c.index.to_string(),
                g.family.to_string(),
                c.params.describe(),
                fmt_opt(c.accuracy),
                status.as_str().unwrap_or_default().to_string(),
                (c.index == g.best).to_string(),
            ])?;
        }
    }
    into_string(w)
}

pub fn confusion_csv(sections: &[(&str, &ConfusionMatrix)]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stage", "actual", "predicted", "count"])?;
    for (stage, m) in sections {
        for (a, row) in m.counts.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                w.write_record([*stage, &m.labels[a], &m.labels[p], &n.to_string()])?;
            }
        }
    }
    into_string(w)
}

pub fn frequencies_csv(rows: &[FrequencyRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["attribute", "bucket", "privileged", "class", "count"])?;
    for r in rows {
        w.write_record([
            r.attribute.as_str(),
            &r.bucket,
            &r.privileged.to_string(),
            &r.class,
            &r.count.to_string(),
        ])?;
    }
    into_string(w)
}

/// Canonical JSON: fixed field order, maps sorted, trailing newline.
pub fn report_json(report: &RunReport) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Writes report.json, fairness.csv, grid.csv, confusion.csv and
/// frequencies.csv into `dir`, creating it if needed.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report_json(report)?)?;
    let mut audits = Vec::new();
    if let Some(a) = &report.pre_audit {
        audits.push(("pre", a));
    }
    if let Some(a) = &report.post_audit {
        audits.push(("post", a));
    }
    fs::write(dir.join("fairness.csv"), fairness_csv(&audits)?)?;
    fs::write(dir.join("grid.csv"), grid_csv(report.grid.as_ref())?)?;
    let mut matrices = Vec::new();
    if let Some(e) = &report.best {
        matrices.push(("best", &e.confusion));
    }
    if let Some(e) = &report.weighted {
        matrices.push(("weighted", &e.confusion));
    }
    fs::write(dir.join("confusion.csv"), confusion_csv(&matrices)?)?;
    fs::write(dir.join("frequencies.csv"), frequencies_csv(&report.frequencies)?)?;
    Ok(())
}

pub fn emit_timings(timings: &Timings, dir: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(dir)?;
    let mut s = serde_json::to_string_pretty(timings)?;
    s.push('\n');
    fs::write(dir.join("timings.json"), s)?;
    Ok(())
}

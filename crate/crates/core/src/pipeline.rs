//! End-to-end run: load, clean, split, balance, grid search, audit,
//! reweight, retrain, audit again.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use thiserror::Error;

use crate::config::{BalanceMethod, ConfigError, ReweightMode, RunConfig};
use crate::dataset::{
    derive_target, dichotomize, drop_uninformative, impute_missing, load_csv, one_hot_encode, train_test_split,
    CategoricalDataset, SensitiveGroups, TargetRule,
};
use crate::fairness::{audit, FairnessReport};
use crate::model::{fit, grid_search, ModelError, ModelParams, SplitData, TrainedModel};
use crate::report::{
    classification_report, emit_report, emit_timings, mlp_summary, ConfusionMatrix, Evaluation, FrequencyRow,
    RunReport, Timings, WeightSummary,
};
use crate::reweight::{assign_weights, SampleWeights};
use crate::smoten::smoten_resample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Load,
    Clean,
    Split,
    Balance,
    Encode,
    Grid,
    Audit,
    Reweight,
    Retrain,
    PostAudit,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Load => "load",
            Stage::Clean => "clean",
            Stage::Split => "split",
            Stage::Balance => "balance",
            Stage::Encode => "encode",
            Stage::Grid => "grid",
            Stage::Audit => "audit",
            Stage::Reweight => "reweight",
            Stage::Retrain => "retrain",
            Stage::PostAudit => "post_audit",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    NonConvergence,
    Output,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::NonConvergence => 4,
            ErrorKind::Output => 1,
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, kind: ErrorKind, message: impl fmt::Display) -> Self {
        Self {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::new(Stage::Load, ErrorKind::Config, e)
    }
}

/// Test-split rows with raw sensitive labels, for the standalone audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PredictionTable {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Result of a run. `error` is set when a stage failed; the report then
/// holds everything computed before that stage.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub timings: Timings,
    pub predictions: PredictionTable,
    pub error: Option<PipelineError>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, PipelineError::exit_code)
    }

    /// Writes the report files, timings and predictions into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let io = |e: &dyn fmt::Display| PipelineError::new(Stage::Report, ErrorKind::Output, e);
        emit_report(&self.report, dir).map_err(|e| io(&e))?;
        emit_timings(&self.timings, dir).map_err(|e| io(&e))?;
        let csv = self.predictions.to_csv().map_err(|e| io(&e))?;
        std::fs::write(dir.join("predictions.csv"), csv).map_err(|e| io(&e))?;
        Ok(())
    }
}

/// Column names of the sensitive attributes plus the legitimate column,
/// without repeats.
pub fn sensitive_columns(cfg: &RunConfig) -> Vec<String> {
    let mut cols: Vec<String> = Vec::new();
    let names = cfg.sensitive.attributes.iter().map(|a| &a.name);
    for c in names.chain(cfg.sensitive.legitimate.iter().map(|l| &l.column)) {
        if !cols.contains(c) {
            cols.push(c.clone());
        }
    }
    cols
}

/// Class labels in the order the target rule assigns codes, restricted to
/// labels that occur.
pub fn class_order(rule: &TargetRule, present: &BTreeSet<String>) -> Vec<String> {
    match rule {
        TargetRule::Completed => [crate::dataset::INCOMPLETE, crate::dataset::COMPLETE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        TargetRule::Noprior => {
            let mut v: Vec<String> = present.iter().cloned().collect();
            v.sort_by_key(|l| (l.parse::<u64>().unwrap_or(u64::MAX), l.clone()));
            v
        }
        TargetRule::Concat => present.iter().cloned().collect(),
    }
}

fn select_groups(g: &SensitiveGroups, idx: &[usize]) -> SensitiveGroups {
    SensitiveGroups {
        names: g.names.clone(),
        privileged: g.privileged.clone(),
        bucket_labels: g.bucket_labels.clone(),
        values: g.values.iter().map(|v| idx.iter().map(|&i| v[i]).collect()).collect(),
    }
}

fn frequencies(groups: &SensitiveGroups, target: &[u32], class_labels: &[String]) -> Vec<FrequencyRow> {
    let mut out = Vec::new();
    for (a, name) in groups.names.iter().enumerate() {
        for bucket in 0..2u8 {
            for (c, label) in class_labels.iter().enumerate() {
                let count = groups.values[a]
                    .iter()
                    .zip(target)
                    .filter(|(&b, &t)| b == bucket && t as usize == c)
                    .count() as u64;
                out.push(FrequencyRow {
                    attribute: name.clone(),
                    bucket: groups.bucket_labels[a][bucket as usize].clone(),
                    privileged: groups.privileged[a] == bucket,
                    class: label.clone(),
                    count,
                });
            }
        }
    }
    out
}

fn evaluate(
    params: &ModelParams,
    model: &TrainedModel,
    x: &crate::matrix::DenseMatrix,
    y: &[usize],
    labels: &[String],
) -> (Evaluation, Vec<usize>) {
    let pred = model.predict(x);
    let confusion = ConfusionMatrix::from_predictions(y, &pred, labels);
    let classification =
        classification_report(&confusion.counts, labels).expect("confusion matrix built square from labels");
    (
        Evaluation {
            params: params.clone(),
            accuracy: classification.accuracy,
            confusion,
            classification,
            layers: mlp_summary(model),
        },
        pred,
    )
}

struct Clock {
    timings: Timings,
    start: Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            timings: Timings::new(),
            start: Instant::now(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.timings
            .insert(stage.to_string(), (now - self.start).as_secs_f64());
        self.start = now;
    }
}

fn model_error(stage: Stage, e: ModelError) -> PipelineError {
    let kind = if e.is_non_convergence() {
        ErrorKind::NonConvergence
    } else {
        ErrorKind::Data
    };
    PipelineError::new(stage, kind, e)
}

/// Runs every stage. Never panics on bad data; failures come back in
/// `RunOutput::error` with the partial report marked `failed_at_<stage>`.
pub fn run_pipeline(cfg: &RunConfig) -> RunOutput {
    let mut echo = cfg.clone();
    echo.out = None;
    let mut out = RunOutput {
        report: RunReport::new(echo),
        timings: Timings::new(),
        predictions: PredictionTable::default(),
        error: None,
    };
    let mut clock = Clock::new();
    if let Err(e) = run_stages(cfg, &mut out, &mut clock) {
        out.report.status = format!("failed_at_{}", e.stage);
        out.report.error = Some(e.to_string());
        out.error = Some(e);
    }
    out.timings = clock.timings;
    out
}

fn run_stages(cfg: &RunConfig, out: &mut RunOutput, clock: &mut Clock) -> Result<(), PipelineError> {
    let report = &mut out.report;
    let data_err = |stage: Stage| move |e: &dyn fmt::Display| PipelineError::new(stage, ErrorKind::Data, e);

    let raw = load_csv(cfg.input_path(), &cfg.schema).map_err(|e| data_err(Stage::Load)(&e))?;
    report.data.rows_loaded = raw.n_rows();
    clock.lap(Stage::Load);

    let err = data_err(Stage::Clean);
    let mut ds = raw;
    for f in &cfg.filters {
        ds = ds.filter_rows(&f.column, &f.allowed).map_err(|e| err(&e))?;
    }
    report.data.rows_after_filters = ds.n_rows();
    let derived = derive_target(&ds, &cfg.target.rule, &cfg.target.columns).map_err(|e| err(&e))?;
    let sens_cols = sensitive_columns(cfg);
    let sens_ds = impute_missing(&derived.project(&sens_cols).map_err(|e| err(&e))?).map_err(|e| err(&e))?;
    let groups = dichotomize(&sens_ds, &cfg.sensitive).map_err(|e| err(&e))?;
    let legit_mask: Option<Vec<bool>> = cfg.sensitive.legitimate.as_ref().map(|l| {
        let j = sens_ds.column_index(&l.column).expect("projected above");
        (0..sens_ds.n_rows()).map(|i| sens_ds.label(i, j) == Some(l.value.as_str())).collect()
    });
    let features = impute_missing(&drop_uninformative(&derived, &cfg.id_columns).map_err(|e| err(&e))?)
        .map_err(|e| err(&e))?;
    let class_labels = features.target_levels().to_vec();
    report.data.rows_used = features.n_rows();
    report.data.features = features.feature_names().to_vec();
    report.data.class_labels = class_labels.clone();
    report.frequencies = frequencies(&groups, features.target(), &class_labels);
    let audit_opts = cfg
        .audit
        .options(&class_labels)
        .map_err(|e| PipelineError::new(Stage::Clean, ErrorKind::Config, e))?;
    clock.lap(Stage::Clean);

    let split = train_test_split(features.n_rows(), cfg.seed).map_err(|e| data_err(Stage::Split)(&e))?;
    let train_ds = features.subset(&split.train);
    let test_ds = features.subset(&split.test);
    report.data.train_rows = split.train.len();
    report.data.test_rows = split.test.len();
    report.data.train_class_counts = train_ds.class_counts();
    let train_groups = select_groups(&groups, &split.train);
    let test_groups = select_groups(&groups, &split.test);
    let test_mask: Option<Vec<bool>> = legit_mask
        .as_ref()
        .map(|m| split.test.iter().map(|&i| m[i]).collect());
    clock.lap(Stage::Split);

    let (balanced, balanced_groups) = match cfg.balance.method {
        BalanceMethod::None => (train_ds.clone(), train_groups),
        BalanceMethod::Smoten => {
            let outcome = smoten_resample(&train_ds, &cfg.resample_plan()).map_err(|e| data_err(Stage::Balance)(&e))?;
            report.data.synthetic_rows = outcome.synthetic.len();
            report.data.warnings.extend(outcome.warnings.iter().cloned());
            let g = extend_groups(cfg, &train_groups, &features, &outcome.dataset, &outcome.synthetic)
                .map_err(|e| data_err(Stage::Balance)(&e))?;
            (outcome.dataset, g)
        }
    };
    report.data.balanced_class_counts = balanced.class_counts();
    clock.lap(Stage::Balance);

    let err = data_err(Stage::Encode);
    let enc_train = one_hot_encode(&balanced).map_err(|e| err(&e))?;
    let enc_test = one_hot_encode(&test_ds).map_err(|e| err(&e))?;
    debug_assert_eq!(enc_train.manifest, enc_test.manifest);
    report.data.encoded_columns = enc_train.n_cols();
    let n_classes = class_labels.len();
    clock.lap(Stage::Encode);

    let ones = vec![1.0; enc_train.n_rows()];
    let data = SplitData {
        x_train: &enc_train.data,
        y_train: &enc_train.target,
        weights: &ones,
        x_test: &enc_test.data,
        y_test: &enc_test.target,
        n_classes,
    };
    let cells = cfg.model.grid().cells(cfg.seed);
    let outcome = grid_search(cells, &data, &cfg.smo).map_err(|e| model_error(Stage::Grid, e))?;
    let best_params = outcome.best_cell().params.clone();
    report.grid = Some(outcome);
    let best_model = fit(&best_params, data.x_train, data.y_train, n_classes, &ones, &cfg.smo)
        .map_err(|e| model_error(Stage::Grid, e))?;
    let (best_eval, pred) = evaluate(&best_params, &best_model, &enc_test.data, &enc_test.target, &class_labels);
    report.best = Some(best_eval);
    out.predictions = prediction_table(&sens_ds, &split.test, &class_labels, &enc_test.target, &pred);
    clock.lap(Stage::Grid);

    let pre = audit(&enc_test.target, &pred, n_classes, &test_groups, test_mask.as_deref(), &audit_opts)
        .map_err(|e| data_err(Stage::Audit)(&e))?;
    report.pre_audit = Some(pre.clone());
    clock.lap(Stage::Audit);

    let (weights, post_eval, post): (SampleWeights, Evaluation, FairnessReport) = match cfg.reweight {
        ReweightMode::None => (
            SampleWeights::uniform(enc_train.n_rows()),
            report.best.clone().expect("set above"),
            pre,
        ),
        ReweightMode::Intersectional => {
            let sw = assign_weights(&balanced_groups, &enc_train.target, n_classes, &cfg.reweight_options)
                .map_err(|e| data_err(Stage::Reweight)(&e))?;
            clock.lap(Stage::Reweight);
            let model = fit(&best_params, &enc_train.data, &enc_train.target, n_classes, &sw.weights, &cfg.smo)
                .map_err(|e| model_error(Stage::Retrain, e))?;
            if !model.converged() {
                return Err(PipelineError::new(
                    Stage::Retrain,
                    ErrorKind::NonConvergence,
                    "weighted retraining hit the iteration cap",
                ));
            }
            let (eval, wpred) = evaluate(&best_params, &model, &enc_test.data, &enc_test.target, &class_labels);
            clock.lap(Stage::Retrain);
            let post = audit(&enc_test.target, &wpred, n_classes, &test_groups, test_mask.as_deref(), &audit_opts)
                .map_err(|e| data_err(Stage::PostAudit)(&e))?;
            (sw, eval, post)
        }
    };
    let w = &weights.weights;
    report.reweighting = Some(WeightSummary {
        mode: match cfg.reweight {
            ReweightMode::None => "none".into(),
            ReweightMode::Intersectional => "intersectional".into(),
        },
        tested: weights.n_tested(),
        significant: weights.n_significant(),
        min: w.iter().cloned().fold(f64::INFINITY, f64::min),
        max: w.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean: w.iter().sum::<f64>() / w.len().max(1) as f64,
        combination: "1 - prod(1 - p) over matching significant interactions (at least one occurs); \
                      the bare product prod(p) is not used"
            .into(),
        interactions: weights.interactions,
    });
    report.weighted = Some(post_eval);
    report.post_audit = Some(post);
    clock.lap(Stage::PostAudit);
    Ok(())
}

/// Group memberships for the balanced training set. Synthetic rows take
/// their bucket from their own synthesized value when the attribute is a
/// feature, otherwise from their seed row.
fn extend_groups(
    cfg: &RunConfig,
    train_groups: &SensitiveGroups,
    features: &CategoricalDataset,
    balanced: &CategoricalDataset,
    synthetic: &[crate::smoten::SyntheticRow],
) -> Result<SensitiveGroups, crate::dataset::DatasetError> {
    let n_orig = train_groups.n_rows();
    let mut g = train_groups.clone();
    for (a, attr) in cfg.sensitive.attributes.iter().enumerate() {
        let col = features.column_index(&attr.name);
        for (s, syn) in synthetic.iter().enumerate() {
            let bucket = match col {
                Some(j) => {
                    let label = balanced.label(n_orig + s, j).unwrap_or_default();
                    attr.bucket_of(label).ok_or_else(|| crate::dataset::DatasetError::UnmappedCategory {
                        attribute: attr.name.clone(),
                        category: label.to_string(),
                    })?
                }
                None => train_groups.values[a][syn.seed_row],
            };
            g.values[a].push(bucket);
        }
    }
    Ok(g)
}

fn prediction_table(
    sens_ds: &CategoricalDataset,
    test: &[usize],
    class_labels: &[String],
    y_true: &[usize],
    y_pred: &[usize],
) -> PredictionTable {
    let mut columns = sens_ds.feature_names().to_vec();
    columns.push("y_true".into());
    columns.push("y_pred".into());
    let rows = test
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut r: Vec<String> = (0..sens_ds.n_features())
                .map(|j| sens_ds.label(i, j).unwrap_or_default().to_string())
                .collect();
            r.push(class_labels[y_true[k]].clone());
            r.push(class_labels[y_pred[k]].clone());
            r
        })
        .collect();
    PredictionTable { columns, rows }
}

/// Metrics-only path: audits a CSV holding `y_true`, `y_pred` and the
/// sensitive columns named in the config.
pub fn audit_predictions(cfg: &RunConfig, path: &Path) -> Result<FairnessReport, PipelineError> {
    let data = |e: &dyn fmt::Display| PipelineError::new(Stage::Audit, ErrorKind::Data, e);
    let mut cols = sensitive_columns(cfg);
    cols.push("y_true".into());
    cols.push("y_pred".into());
    let schema = crate::dataset::Schema {
        columns: cols.clone(),
        missing_tokens: cfg.schema.missing_tokens.clone(),
    };
    let ds = load_csv(path, &schema).map_err(|e| data(&e))?;
    let (jt, jp) = (cols.len() - 2, cols.len() - 1);
    let mut present = BTreeSet::new();
    for i in 0..ds.n_rows() {
        for j in [jt, jp] {
            let l = ds
                .label(i, j)
                .ok_or_else(|| data(&format!("row {} has an empty {}", i + 1, cols[j])))?;
            present.insert(l.to_string());
        }
    }
    let labels = class_order(&cfg.target.rule, &present);
    let code = |l: &str| {
        labels
            .iter()
            .position(|c| c == l)
            .ok_or_else(|| data(&format!("label `{l}` is not a class of the {:?} rule", cfg.target.rule)))
    };
    let mut y_true = Vec::with_capacity(ds.n_rows());
    let mut y_pred = Vec::with_capacity(ds.n_rows());
    for i in 0..ds.n_rows() {
        y_true.push(code(ds.label(i, jt).unwrap_or_default())?);
        y_pred.push(code(ds.label(i, jp).unwrap_or_default())?);
    }
    let groups = dichotomize(&ds, &cfg.sensitive).map_err(|e| data(&e))?;
    let mask: Option<Vec<bool>> = cfg.sensitive.legitimate.as_ref().map(|l| {
        let j = ds.column_index(&l.column).expect("in schema");
        (0..ds.n_rows()).map(|i| ds.label(i, j) == Some(l.value.as_str())).collect()
    });
    let opts = cfg
        .audit
        .options(&labels)
        .map_err(|e| PipelineError::new(Stage::Audit, ErrorKind::Config, e))?;
    audit(&y_true, &y_pred, labels.len(), &groups, mask.as_deref(), &opts).map_err(|e| data(&e))
}

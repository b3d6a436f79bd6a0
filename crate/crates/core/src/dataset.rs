//! Ingestion and preparation of all-nominal tabular data.
//!
//! The flow is `load_csv` → [`filter_rows`](CategoricalDataset::filter_rows)
//! → [`derive_target`] → [`drop_uninformative`] → [`impute_missing`] →
//! [`train_test_split`] → [`one_hot_encode`]. Every cell is held as a small
//! integer code; codes are dense per column and assigned in order of first
//! appearance in the file.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairness::LegitimateCondition;
use crate::matrix::DenseMatrix;

/// Reserved code for a missing cell.
pub const MISSING: u32 = u32::MAX;

/// Label of the favorable class produced by [`TargetRule::Completed`].
pub const COMPLETE: &str = "COMPLETE";
pub const INCOMPLETE: &str = "INCOMPLETE";

/// Fraction of rows held out for testing.
pub const TEST_FRACTION_NUM: usize = 3;
pub const TEST_FRACTION_DEN: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("column `{0}` is missing from the CSV header")]
    MissingColumn(String),
    #[error("row {row} has {found} fields but the header has {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("the CSV file has no header or no data rows")]
    EmptyFile,
    #[error("target rule needs column `{0}`")]
    MissingRuleColumn(String),
    #[error("column `{column}` holds `{value}`, which is not a prior-treatment count")]
    InvalidRuleValue { column: String, value: String },
    #[error("target has {0} distinct classes, need at least 2")]
    DegenerateTarget(usize),
    #[error("no feature columns remain")]
    EmptyFeatureSet,
    #[error("column `{0}` has no non-missing values to impute from")]
    AllMissingColumn(String),
    #[error("attribute `{attribute}` has no bucket for category `{category}`")]
    UnmappedCategory { attribute: String, category: String },
    #[error("invalid sensitive spec for `{attribute}`: {reason}")]
    InvalidSensitiveSpec { attribute: String, reason: String },
    #[error("column `{0}` still contains missing values")]
    ResidualMissing(String),
    #[error("need at least 10 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// Columns to read and the tokens that mean "missing".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<String>,
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "NA".to_string()]
}

impl Schema {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            missing_tokens: default_missing_tokens(),
        }
    }

    fn is_missing(&self, cell: &str) -> bool {
        let cell = cell.trim();
        self.missing_tokens.iter().any(|t| t.trim() == cell)
    }
}

/// Rows of categorical codes plus a categorical target.
///
/// Before [`derive_target`] runs the target is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDataset {
    feature_names: Vec<String>,
    levels: Vec<Vec<String>>,
    rows: Vec<Vec<u32>>,
    target: Vec<u32>,
    target_levels: Vec<String>,
}

impl CategoricalDataset {
    /// Codes raw string records column by column. Cells matching a missing
    /// token become [`MISSING`].
    pub fn from_records(schema: &Schema, records: &[Vec<String>]) -> Self {
        let n_cols = schema.columns.len();
        let mut lookup: Vec<HashMap<String, u32>> = vec![HashMap::new(); n_cols];
        let mut levels: Vec<Vec<String>> = vec![Vec::new(); n_cols];
        let rows = records
            .iter()
            .map(|rec| {
                rec.iter()
                    .enumerate()
                    .map(|(j, cell)| {
                        if schema.is_missing(cell) {
                            return MISSING;
                        }
                        let cell = cell.trim();
                        if let Some(&code) = lookup[j].get(cell) {
                            return code;
                        }
                        let code = levels[j].len() as u32;
                        levels[j].push(cell.to_string());
                        lookup[j].insert(cell.to_string(), code);
                        code
                    })
                    .collect()
            })
            .collect();
        Self {
            feature_names: schema.columns.clone(),
            levels,
            rows,
            target: Vec::new(),
            target_levels: Vec::new(),
        }
    }

    /// Test and config helper: string rows in, coded dataset out.
    pub fn from_str_rows(columns: &[&str], rows: &[&[&str]]) -> Self {
        let schema = Schema::new(columns.iter().copied());
        let records: Vec<Vec<String>> = rows
            .iter()
            .map(|r| r.iter().map(|c| c.to_string()).collect())
            .collect();
        Self::from_records(&schema, &records)
    }

    /// Attaches an already-coded target. Panics if the length differs from the
    /// row count or a code is out of range.
    pub fn with_target(mut self, target: Vec<u32>, target_levels: Vec<String>) -> Self {
        assert_eq!(target.len(), self.rows.len(), "target length mismatch");
        assert!(
            target.iter().all(|&t| (t as usize) < target_levels.len()),
            "target code out of range"
        );
        self.target = target;
        self.target_levels = target_levels;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Category labels of column `j`, indexed by code.
    pub fn levels(&self, j: usize) -> &[String] {
        &self.levels[j]
    }

    pub fn cardinality(&self, j: usize) -> usize {
        self.levels[j].len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }

    pub fn rows(&self) -> &[Vec<u32>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.rows[i]
    }

    pub fn target(&self) -> &[u32] {
        &self.target
    }

    pub fn target_levels(&self) -> &[String] {
        &self.target_levels
    }

    pub fn n_classes(&self) -> usize {
        self.target_levels.len()
    }

    /// Label of cell `(i, j)`; `None` when missing.
    pub fn label(&self, i: usize, j: usize) -> Option<&str> {
        let code = self.rows[i][j];
        (code != MISSING).then(|| self.levels[j][code as usize].as_str())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &t in &self.target {
            counts[t as usize] += 1;
        }
        counts
    }

    /// Rows at `indices` (repeats allowed), sharing this dataset's code space.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            levels: self.levels.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            target: if self.target.is_empty() {
                Vec::new()
            } else {
                indices.iter().map(|&i| self.target[i]).collect()
            },
            target_levels: self.target_levels.clone(),
        }
    }

    /// Same code space, new rows. Used to carry synthetic rows after
    /// oversampling. Panics if a code is outside its column's range.
    pub fn with_rows(&self, rows: Vec<Vec<u32>>, target: Vec<u32>) -> Self {
        assert_eq!(rows.len(), target.len());
        for r in &rows {
            assert_eq!(r.len(), self.n_features());
            for (j, &c) in r.iter().enumerate() {
                assert!(c == MISSING || (c as usize) < self.levels[j].len());
            }
        }
        Self {
            feature_names: self.feature_names.clone(),
            levels: self.levels.clone(),
            rows,
            target,
            target_levels: self.target_levels.clone(),
        }
    }

    /// Keeps rows whose `column` label is one of `allowed`, then compacts codes.
    pub fn filter_rows(&self, column: &str, allowed: &[String]) -> Result<Self> {
        let j = self
            .column_index(column)
            .ok_or_else(|| DatasetError::UnknownColumn(column.to_string()))?;
        let keep: Vec<usize> = (0..self.n_rows())
            .filter(|&i| self.label(i, j).is_some_and(|l| allowed.iter().any(|a| a == l)))
            .collect();
        let mut out = self.subset(&keep);
        out.compact_codes();
        Ok(out)
    }

    /// Only the named columns, in the given order. Rows and target are kept.
    pub fn project(&self, columns: &[String]) -> Result<Self> {
        let idx = columns
            .iter()
            .map(|c| self.column_index(c).ok_or_else(|| DatasetError::UnknownColumn(c.clone())))
            .collect::<Result<Vec<usize>>>()?;
        Ok(Self {
            feature_names: idx.iter().map(|&j| self.feature_names[j].clone()).collect(),
            levels: idx.iter().map(|&j| self.levels[j].clone()).collect(),
            rows: self.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            target: self.target.clone(),
            target_levels: self.target_levels.clone(),
        })
    }

    fn remove_columns(&mut self, drop: &BTreeSet<usize>) {
        let keep = |j: &usize| !drop.contains(j);
        let idx: Vec<usize> = (0..self.n_features()).filter(keep).collect();
        self.feature_names = idx.iter().map(|&j| self.feature_names[j].clone()).collect();
        self.levels = idx.iter().map(|&j| self.levels[j].clone()).collect();
        for r in &mut self.rows {
            *r = idx.iter().map(|&j| r[j]).collect();
        }
    }

    /// Re-densifies codes after rows were removed, preserving the original
    /// first-appearance order among the codes that survive.
    fn compact_codes(&mut self) {
        for j in 0..self.n_features() {
            let mut used = vec![false; self.levels[j].len()];
            for r in &self.rows {
                if r[j] != MISSING {
                    used[r[j] as usize] = true;
                }
            }
            let mut remap = vec![MISSING; used.len()];
            let mut new_levels = Vec::new();
            for (code, &u) in used.iter().enumerate() {
                if u {
                    remap[code] = new_levels.len() as u32;
                    new_levels.push(self.levels[j][code].clone());
                }
            }
            for r in &mut self.rows {
                if r[j] != MISSING {
                    r[j] = remap[r[j] as usize];
                }
            }
            self.levels[j] = new_levels;
        }
    }
}

/// Reads a UTF-8 CSV with a header row, keeping only the schema's columns.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<CategoricalDataset> {
    let file = std::fs::File::open(path)?;
    load_csv_from_reader(file, schema)
}

pub fn load_csv_from_reader<R: Read>(reader: R, schema: &Schema) -> Result<CategoricalDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(DatasetError::EmptyFile),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let positions = schema
        .columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| DatasetError::MissingColumn(c.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(DatasetError::RaggedRow {
                row: i + 1,
                expected: header.len(),
                found: rec.len(),
            });
        }
        rows.push(positions.iter().map(|&p| rec[p].to_string()).collect());
    }
    if rows.is_empty() {
        return Err(DatasetError::EmptyFile);
    }
    Ok(CategoricalDataset::from_records(schema, &rows))
}

/// How the classification target is built from the raw columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TargetRule {
    /// `COMPLETE` when the reason code is `1`, `INCOMPLETE` otherwise.
    Completed,
    /// Prior-treatment count, capped at 3.
    Noprior,
    /// `<COMPLETED label>_<capped NOPRIOR>`, up to eight classes.
    Concat,
}

/// Source columns for the target rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleColumns {
    #[serde(default = "default_reason")]
    pub reason: String,
    #[serde(default = "default_noprior")]
    pub noprior: String,
}

fn default_reason() -> String {
    "REASON".into()
}

fn default_noprior() -> String {
    "NOPRIOR".into()
}

impl Default for RuleColumns {
    fn default() -> Self {
        Self {
            reason: default_reason(),
            noprior: default_noprior(),
        }
    }
}

const NOPRIOR_CAP: u32 = 3;

fn completed_label(reason: Option<&str>) -> &'static str {
    if reason == Some("1") {
        COMPLETE
    } else {
        INCOMPLETE
    }
}

fn noprior_code(column: &str, label: &str) -> Result<u32> {
    label
        .parse::<u32>()
        .map(|v| v.min(NOPRIOR_CAP))
        .map_err(|_| DatasetError::InvalidRuleValue {
            column: column.to_string(),
            value: label.to_string(),
        })
}

/// Replaces the target according to `rule` and removes the source columns
/// from the features.
///
/// Rows whose NOPRIOR cell is missing are dropped for the `Noprior` and
/// `Concat` rules; a missing REASON counts as incomplete.
pub fn derive_target(
    ds: &CategoricalDataset,
    rule: &TargetRule,
    cols: &RuleColumns,
) -> Result<CategoricalDataset> {
    let find = |name: &str| {
        ds.column_index(name)
            .ok_or_else(|| DatasetError::MissingRuleColumn(name.to_string()))
    };
    let (reason_j, noprior_j) = match rule {
        TargetRule::Completed => (Some(find(&cols.reason)?), None),
        TargetRule::Noprior => (None, Some(find(&cols.noprior)?)),
        TargetRule::Concat => (Some(find(&cols.reason)?), Some(find(&cols.noprior)?)),
    };

    let mut keep = Vec::new();
    let mut labels = Vec::new();
    for i in 0..ds.n_rows() {
        let noprior = match noprior_j {
            Some(j) => match ds.label(i, j) {
                Some(l) => Some(noprior_code(&cols.noprior, l)?),
                None => continue,
            },
            None => None,
        };
        let label = match (rule, noprior) {
            (TargetRule::Completed, _) => completed_label(ds.label(i, reason_j.unwrap())).to_string(),
            (TargetRule::Noprior, Some(n)) => n.to_string(),
            (TargetRule::Concat, Some(n)) => {
                format!("{}_{}", completed_label(ds.label(i, reason_j.unwrap())), n)
            }
            _ => unreachable!("noprior present for rules that need it"),
        };
        keep.push(i);
        labels.push(label);
    }

    let target_levels: Vec<String> = match rule {
        TargetRule::Completed => vec![INCOMPLETE.to_string(), COMPLETE.to_string()],
        TargetRule::Noprior => {
            let present: BTreeSet<u32> = labels.iter().map(|l| l.parse().unwrap()).collect();
            present.into_iter().map(|v| v.to_string()).collect()
        }
        TargetRule::Concat => labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let distinct: BTreeSet<&String> = labels.iter().collect();
    if distinct.len() < 2 {
        return Err(DatasetError::DegenerateTarget(distinct.len()));
    }
    let code_of: HashMap<&str, u32> = target_levels
        .iter()
        .enumerate()
        .map(|(c, l)| (l.as_str(), c as u32))
        .collect();
    let target = labels.iter().map(|l| code_of[l.as_str()]).collect();

    let mut out = ds.subset(&keep);
    out.compact_codes();
    let drop: BTreeSet<usize> = reason_j.into_iter().chain(noprior_j).collect();
    out.remove_columns(&drop);
    out.target = target;
    out.target_levels = target_levels;
    Ok(out)
}

/// Removes constant columns and the configured identifier columns.
///
/// A column is constant when it holds at most one distinct non-missing code.
/// Identifier names absent from the dataset are ignored.
pub fn drop_uninformative(ds: &CategoricalDataset, id_columns: &[String]) -> Result<CategoricalDataset> {
    let mut drop = BTreeSet::new();
    for (j, name) in ds.feature_names().iter().enumerate() {
        if id_columns.iter().any(|c| c == name) {
            drop.insert(j);
            continue;
        }
        let distinct: BTreeSet<u32> = ds.rows.iter().map(|r| r[j]).filter(|&c| c != MISSING).collect();
        if distinct.len() <= 1 {
            drop.insert(j);
        }
    }
    if drop.len() == ds.n_features() {
        return Err(DatasetError::EmptyFeatureSet);
    }
    let mut out = ds.clone();
    out.remove_columns(&drop);
    out.compact_codes();
    Ok(out)
}

/// Replaces every missing cell with its column's most frequent code;
/// ties go to the smallest code.
pub fn impute_missing(ds: &CategoricalDataset) -> Result<CategoricalDataset> {
    let mut out = ds.clone();
    for j in 0..ds.n_features() {
        if !ds.rows.iter().any(|r| r[j] == MISSING) {
            continue;
        }
        let mut counts = vec![0usize; ds.cardinality(j)];
        for r in &ds.rows {
            if r[j] != MISSING {
                counts[r[j] as usize] += 1;
            }
        }
        // max_by_key keeps the last maximum, so scan in reverse
        let mode = counts
            .iter()
            .enumerate()
            .rev()
            .max_by_key(|&(_, &c)| c)
            .filter(|&(_, &c)| c > 0)
            .map(|(code, _)| code as u32)
            .ok_or_else(|| DatasetError::AllMissingColumn(ds.feature_names[j].clone()))?;
        for r in &mut out.rows {
            if r[j] == MISSING {
                r[j] = mode;
            }
        }
    }
    Ok(out)
}

/// One sensitive attribute and how its categories collapse to {0, 1}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveAttribute {
    pub name: String,
    /// Category label → bucket.
    #[serde(default)]
    pub buckets: BTreeMap<String, u8>,
    /// Bucket for labels absent from `buckets`; makes the map total.
    #[serde(default)]
    pub otherwise: Option<u8>,
    /// Which bucket is the privileged group.
    pub privileged: u8,
    /// Display names for buckets 0 and 1.
    #[serde(default)]
    pub labels: Option<[String; 2]>,
}

impl SensitiveAttribute {
    pub fn bucket_of(&self, category: &str) -> Option<u8> {
        self.buckets.get(category).copied().or(self.otherwise)
    }

    pub fn bucket_label(&self, bucket: u8) -> String {
        match &self.labels {
            Some(l) => l[bucket as usize].clone(),
            None => bucket.to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| DatasetError::InvalidSensitiveSpec {
            attribute: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.privileged > 1 {
            return Err(bad("privileged value must be 0 or 1"));
        }
        if self.buckets.values().chain(self.otherwise.iter()).any(|&b| b > 1) {
            return Err(bad("bucket values must be 0 or 1"));
        }
        Ok(())
    }
}

/// The protected attributes and the optional legitimate conditioning attribute.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitiveSpec {
    #[serde(default)]
    pub attributes: Vec<SensitiveAttribute>,
    #[serde(default)]
    pub legitimate: Option<LegitimateCondition>,
}

/// Per-row {0, 1} membership for each dichotomized attribute.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitiveGroups {
    pub names: Vec<String>,
    pub privileged: Vec<u8>,
    pub bucket_labels: Vec<[String; 2]>,
    /// `values[a][i]` is row `i`'s bucket for attribute `a`.
    pub values: Vec<Vec<u8>>,
}

impl SensitiveGroups {
    pub fn n_rows(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Collapses each sensitive column to {0, 1} buckets.
pub fn dichotomize(ds: &CategoricalDataset, spec: &SensitiveSpec) -> Result<SensitiveGroups> {
    let mut out = SensitiveGroups {
        names: Vec::new(),
        privileged: Vec::new(),
        bucket_labels: Vec::new(),
        values: Vec::new(),
    };
    for attr in &spec.attributes {
        attr.validate()?;
        let j = ds
            .column_index(&attr.name)
            .ok_or_else(|| DatasetError::UnknownColumn(attr.name.clone()))?;
        let mut by_code = Vec::with_capacity(ds.cardinality(j));
        for label in ds.levels(j) {
            let b = attr.bucket_of(label).ok_or_else(|| DatasetError::UnmappedCategory {
                attribute: attr.name.clone(),
                category: label.clone(),
            })?;
            by_code.push(b);
        }
        let values = ds
            .rows
            .iter()
            .map(|r| match r[j] {
                MISSING => Err(DatasetError::ResidualMissing(attr.name.clone())),
                c => Ok(by_code[c as usize]),
            })
            .collect::<Result<Vec<u8>>>()?;
        out.names.push(attr.name.clone());
        out.privileged.push(attr.privileged);
        out.bucket_labels.push([attr.bucket_label(0), attr.bucket_label(1)]);
        out.values.push(values);
    }
    Ok(out)
}

/// Source of one encoded column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ColumnOrigin {
    pub feature: String,
    pub category: String,
    pub feature_index: usize,
    pub code: u32,
}

impl ColumnOrigin {
    /// `FEATURE_category`, e.g. `SERVICES_4`.
    pub fn name(&self) -> String {
        format!("{}_{}", self.feature, self.category)
    }
}

/// Binary design matrix plus the manifest mapping columns back to categories.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub data: DenseMatrix,
    pub manifest: Vec<ColumnOrigin>,
    pub target: Vec<usize>,
    pub class_labels: Vec<String>,
}

impl EncodedMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.n_cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    /// Recovers the per-feature codes of row `i` from its one-hot columns.
    pub fn decode_row(&self, i: usize) -> Vec<u32> {
        let n_features = self.manifest.last().map_or(0, |c| c.feature_index + 1);
        let mut codes = vec![MISSING; n_features];
        for (col, origin) in self.manifest.iter().enumerate() {
            if self.data.get(i, col) == 1.0 {
                codes[origin.feature_index] = origin.code;
            }
        }
        codes
    }
}

/// One column per (feature, category) pair, in feature then code order.
pub fn one_hot_encode(ds: &CategoricalDataset) -> Result<EncodedMatrix> {
    let mut manifest = Vec::new();
    let mut offsets = Vec::with_capacity(ds.n_features());
    for j in 0..ds.n_features() {
        offsets.push(manifest.len());
        for (code, label) in ds.levels(j).iter().enumerate() {
            manifest.push(ColumnOrigin {
                feature: ds.feature_names[j].clone(),
                category: label.clone(),
                feature_index: j,
                code: code as u32,
            });
        }
    }
    let mut data = DenseMatrix::zeros(ds.n_rows(), manifest.len());
    for (i, r) in ds.rows.iter().enumerate() {
        for (j, &code) in r.iter().enumerate() {
            if code == MISSING {
                return Err(DatasetError::ResidualMissing(ds.feature_names[j].clone()));
            }
            data.set(i, offsets[j] + code as usize, 1.0);
        }
    }
    Ok(EncodedMatrix {
        data,
        manifest,
        target: ds.target.iter().map(|&t| t as usize).collect(),
        class_labels: ds.target_levels.clone(),
    })
}

/// Disjoint train/test row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Shuffled 70/30 split. The test side gets `floor(0.3 n)` rows and the
/// remainder goes to training. Both index lists come back sorted.
pub fn train_test_split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 10 {
        return Err(DatasetError::TooFewRows(n));
    }
    let n_test = n * TEST_FRACTION_NUM / TEST_FRACTION_DEN;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(SplitIndices { train, test, seed })
}

//! Group fairness metrics over predictions, labels and subgroup membership.
//!
//! Every rate is an exact fraction of integer counts and every verdict is a
//! comparison between fractions, so a metric sitting exactly on a threshold
//! lands on the side the definition says it should. Conversion to `f64`
//! happens only when a result is reported.
//!
//! Two families of verdicts exist:
//!
//! * difference metrics (SPD, equal opportunity, equalized odds) are FAIR
//!   when `|value| < threshold`;
//! * ratio metrics (DI and the worst-case min/max ratios) are FAIR when
//!   `value ≥ ratio_threshold`, the four-fifths rule by default.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::SensitiveGroups;

pub type Rational = Ratio<i128>;

#[derive(Debug, Error, PartialEq)]
pub enum FairnessError {
    #[error("subgroup `{0}` has no rows")]
    EmptyGroup(String),
    #[error("need at least {needed} usable subgroups, found {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("no subgroup has an actual positive for the requested class")]
    NoPositives,
    #[error("no subgroup has an actual negative for the requested class")]
    NoNegatives,
    #[error("every subgroup has a zero rate for every class considered")]
    ZeroMaxRate,
    #[error("fewer than two subgroups have rows satisfying the legitimate condition")]
    NoConditionedRows,
    #[error("class {class} is outside 0..{n_classes}")]
    InvalidClass { class: usize, n_classes: usize },
    #[error("counts for subgroup `{group}` are inconsistent: {reason}")]
    InconsistentCounts { group: String, reason: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("threshold grid must be non-empty and ascending")]
    BadGrid,
}

type Result<T> = std::result::Result<T, FairnessError>;

/// Column and value whose rows form the legitimate stratum `L = 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegitimateCondition {
    pub column: String,
    pub value: String,
}

/// One-vs-rest confusion counts of one class inside one subgroup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn actual(&self) -> u64 {
        self.tp + self.fn_
    }
}

/// Confusion counts per subgroup and class.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedOutcomes {
    labels: Vec<String>,
    n_classes: usize,
    /// `cells[s][c]`
    cells: Vec<Vec<ClassCounts>>,
    totals: Vec<u64>,
}

fn frac(num: u64, den: u64) -> Option<Rational> {
    (den > 0).then(|| Rational::new(num as i128, den as i128))
}

impl GroupedOutcomes {
    /// Counts from per-row labels. `groups[i]` indexes `labels`; rows where
    /// `mask` is false are ignored.
    pub fn from_rows(
        y_true: &[usize],
        y_pred: &[usize],
        groups: &[usize],
        labels: Vec<String>,
        n_classes: usize,
        mask: Option<&[bool]>,
    ) -> Result<Self> {
        if y_pred.len() != y_true.len() {
            return Err(FairnessError::LengthMismatch(y_true.len(), y_pred.len()));
        }
        if groups.len() != y_true.len() {
            return Err(FairnessError::LengthMismatch(y_true.len(), groups.len()));
        }
        if let Some(m) = mask {
            if m.len() != y_true.len() {
                return Err(FairnessError::LengthMismatch(y_true.len(), m.len()));
            }
        }
        let n_groups = labels.len();
        let mut cells = vec![vec![ClassCounts::default(); n_classes]; n_groups];
        let mut totals = vec![0u64; n_groups];
        for i in 0..y_true.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (t, p, s) = (y_true[i], y_pred[i], groups[i]);
            for class in [t, p] {
                if class >= n_classes {
                    return Err(FairnessError::InvalidClass { class, n_classes });
                }
            }
            totals[s] += 1;
            for (c, cell) in cells[s].iter_mut().enumerate() {
                match (t == c, p == c) {
                    (true, true) => cell.tp += 1,
                    (false, true) => cell.fp += 1,
                    (true, false) => cell.fn_ += 1,
                    (false, false) => cell.tn += 1,
                }
            }
        }
        Ok(Self {
            labels,
            n_classes,
            cells,
            totals,
        })
    }

    /// Counts supplied directly, `cells[s][c]`. Each subgroup's per-class
    /// counts must add up to the same total.
    pub fn from_counts(labels: Vec<String>, cells: Vec<Vec<ClassCounts>>) -> Result<Self> {
        if labels.len() != cells.len() {
            return Err(FairnessError::LengthMismatch(labels.len(), cells.len()));
        }
        let n_classes = cells.first().map_or(0, Vec::len);
        let mut totals = Vec::with_capacity(cells.len());
        for (label, row) in labels.iter().zip(&cells) {
            if row.len() != n_classes {
                return Err(FairnessError::InconsistentCounts {
                    group: label.clone(),
                    reason: format!("{} classes, expected {n_classes}", row.len()),
                });
            }
            let total = row.first().map_or(0, ClassCounts::total);
            if row.iter().any(|c| c.total() != total) {
                return Err(FairnessError::InconsistentCounts {
                    group: label.clone(),
                    reason: "per-class counts do not share one total".into(),
                });
            }
            totals.push(total);
        }
        Ok(Self {
            labels,
            n_classes,
            cells,
            totals,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn total(&self, s: usize) -> u64 {
        self.totals[s]
    }

    pub fn counts(&self, s: usize, c: usize) -> ClassCounts {
        self.cells[s][c]
    }

    /// P(Ŷ = c | A ∈ s)
    pub fn pass_rate(&self, s: usize, c: usize) -> Option<Rational> {
        frac(self.cells[s][c].predicted(), self.totals[s])
    }

    /// P(Ŷ = c, Y = c | A ∈ s)
    pub fn correct_rate(&self, s: usize, c: usize) -> Option<Rational> {
        frac(self.cells[s][c].tp, self.totals[s])
    }

    pub fn tpr(&self, s: usize, c: usize) -> Option<Rational> {
        let k = self.cells[s][c];
        frac(k.tp, k.actual())
    }

    pub fn fpr(&self, s: usize, c: usize) -> Option<Rational> {
        let k = self.cells[s][c];
        frac(k.fp, k.fp + k.tn)
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.n_classes {
            return Err(FairnessError::InvalidClass {
                class,
                n_classes: self.n_classes,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Binary,
    Multiclass,
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Fair,
    Unfair,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Fair => "FAIR",
            Verdict::Unfair => "UNFAIR",
        })
    }
}

/// Thresholds shared by all metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Difference metrics are FAIR when `|value|` is strictly below this.
    pub difference: f64,
    /// Ratio metrics are FAIR when the value is at least this.
    pub ratio: f64,
    /// Ascending sweep used for `max_fair_threshold`.
    pub grid: Vec<f64>,
}

/// `0.01 + 0.05k` for `k = 0..19`.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..20).map(|k| (1 + 5 * k) as f64 / 100.0).collect()
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            difference: 0.2,
            ratio: 0.8,
            grid: default_threshold_grid(),
        }
    }
}

/// Exact value of the shortest decimal that prints as `x`, so `0.2` means
/// one fifth rather than the nearest binary double.
pub fn decimal_ratio(x: f64) -> Rational {
    let s = format!("{x}");
    let (neg, s) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.as_str()),
    };
    let (int, frac_part) = s.split_once('.').unwrap_or((s, ""));
    let den = 10i128.pow(frac_part.len() as u32);
    let num = int.parse::<i128>().unwrap_or(0) * den + frac_part.parse::<i128>().unwrap_or(0);
    let r = Rational::new(num, den);
    if neg {
        -r
    } else {
        r
    }
}

/// `|v|` rounded half-up to two decimals, exactly.
pub fn round2(v: &Rational) -> Rational {
    let scaled = v.abs() * Rational::from_integer(100) + Rational::new(1, 2);
    Rational::new(scaled.floor().to_integer(), 100)
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Largest grid threshold reported for a difference metric.
///
/// The magnitude is first rounded to two decimals, as in published tables.
/// A rounded value of zero reports `0.00`; a value above every grid point
/// reports nothing; otherwise the largest grid point not above the rounded
/// value is returned (`0.27 → 0.26`, `0.21 → 0.21`, `0.05 → 0.01`).
pub fn max_fair_threshold(value: &Rational, grid: &[f64]) -> Option<f64> {
    let r = round2(value);
    if r.is_zero() {
        return Some(0.0);
    }
    let top = grid.last().copied()?;
    if r > decimal_ratio(top) {
        return None;
    }
    grid.iter().rev().find(|&&t| decimal_ratio(t) <= r).copied()
}

fn serialize_value<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("+inf")
    } else {
        s.serialize_str("nan")
    }
}

fn serialize_exact<S: Serializer>(v: &Option<Rational>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(r) => s.serialize_str(&format!("{}/{}", r.numer(), r.denom())),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricResult {
    pub name: String,
    pub scope: Scope,
    /// Signed for SPD; `+inf` marks a zero denominator.
    #[serde(serialize_with = "serialize_value")]
    pub value: f64,
    #[serde(serialize_with = "serialize_exact")]
    pub exact: Option<Rational>,
    pub threshold: f64,
    pub verdict: Verdict,
    pub max_fair_threshold: Option<f64>,
    /// Intermediate quantities such as per-subgroup rates or max/min TPR.
    pub components: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

fn difference_result(
    name: &str,
    scope: Scope,
    value: Rational,
    th: &Thresholds,
    components: BTreeMap<String, f64>,
    notes: Vec<String>,
) -> MetricResult {
    let verdict = if value.abs() < decimal_ratio(th.difference) {
        Verdict::Fair
    } else {
        Verdict::Unfair
    };
    MetricResult {
        name: name.to_string(),
        scope,
        value: to_f64(&value),
        exact: Some(value),
        threshold: th.difference,
        verdict,
        max_fair_threshold: max_fair_threshold(&value, &th.grid),
        components,
        notes,
    }
}

fn ratio_result(
    name: &str,
    scope: Scope,
    value: Option<Rational>,
    th: &Thresholds,
    components: BTreeMap<String, f64>,
    mut notes: Vec<String>,
) -> MetricResult {
    let (v, verdict) = match value {
        Some(r) => (
            to_f64(&r),
            if r >= decimal_ratio(th.ratio) {
                Verdict::Fair
            } else {
                Verdict::Unfair
            },
        ),
        None => {
            notes.push("zero denominator; value reported as +inf".into());
            (f64::INFINITY, Verdict::Unfair)
        }
    };
    MetricResult {
        name: name.to_string(),
        scope,
        value: v,
        exact: value,
        threshold: th.ratio,
        verdict,
        max_fair_threshold: None,
        components,
        notes,
    }
}

fn require_rows(g: &GroupedOutcomes, s: usize) -> Result<()> {
    if g.total(s) == 0 {
        return Err(FairnessError::EmptyGroup(g.labels[s].clone()));
    }
    Ok(())
}

/// `(min, max)` of the present values.
fn min_max(values: impl IntoIterator<Item = Rational>) -> Option<(Rational, Rational)> {
    values.into_iter().fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// `P(Ŷ=pos | A=unprivileged) / P(Ŷ=pos | A=privileged)`.
pub fn disparate_impact(
    g: &GroupedOutcomes,
    unprivileged: usize,
    privileged: usize,
    positive: usize,
    th: &Thresholds,
) -> Result<MetricResult> {
    g.check_class(positive)?;
    require_rows(g, unprivileged)?;
    require_rows(g, privileged)?;
    let ru = g.pass_rate(unprivileged, positive).unwrap();
    let rp = g.pass_rate(privileged, positive).unwrap();
    let components = BTreeMap::from([
        (format!("rate[{}]", g.labels[unprivileged]), to_f64(&ru)),
        (format!("rate[{}]", g.labels[privileged]), to_f64(&rp)),
    ]);
    let value = (!rp.is_zero()).then(|| ru / rp);
    Ok(ratio_result("disparate_impact", Scope::Binary, value, th, components, Vec::new()))
}

/// Per class, min over subgroups of `P(Ŷ=c, Y=c | s)` divided by the max.
pub fn disparate_impact_multiclass(g: &GroupedOutcomes, th: &Thresholds) -> Result<Vec<MetricResult>> {
    let rows: Vec<usize> = (0..g.n_groups()).filter(|&s| g.total(s) > 0).collect();
    if rows.len() < 2 {
        return Err(FairnessError::TooFewGroups {
            needed: 2,
            found: rows.len(),
        });
    }
    Ok((0..g.n_classes())
        .map(|c| {
            let rates: Vec<Rational> = rows.iter().map(|&s| g.correct_rate(s, c).unwrap()).collect();
            let (lo, hi) = min_max(rates.iter().copied()).unwrap();
            let components = rows
                .iter()
                .zip(&rates)
                .map(|(&s, r)| (format!("rate[{}]", g.labels[s]), to_f64(r)))
                .collect();
            let value = (!hi.is_zero()).then(|| lo / hi);
            let mut r = ratio_result("disparate_impact", Scope::Multiclass, value, th, components, Vec::new());
            r.name = format!("disparate_impact[class={c}]");
            r
        })
        .collect())
}

/// `P(Ŷ=pos | A=unprivileged) − P(Ŷ=pos | A=privileged)`.
pub fn statistical_parity_difference(
    g: &GroupedOutcomes,
    unprivileged: usize,
    privileged: usize,
    positive: usize,
    th: &Thresholds,
) -> Result<MetricResult> {
    g.check_class(positive)?;
    require_rows(g, unprivileged)?;
    require_rows(g, privileged)?;
    let ru = g.pass_rate(unprivileged, positive).unwrap();
    let rp = g.pass_rate(privileged, positive).unwrap();
    let components = BTreeMap::from([
        (format!("rate[{}]", g.labels[unprivileged]), to_f64(&ru)),
        (format!("rate[{}]", g.labels[privileged]), to_f64(&rp)),
    ]);
    Ok(difference_result(
        "statistical_parity_difference",
        Scope::Binary,
        ru - rp,
        th,
        components,
        Vec::new(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpdMulticlass {
    pub per_class: Vec<MetricResult>,
    /// Some class has an SPD that rounds to 0.00.
    pub satisfied: bool,
}

pub fn spd_multiclass(
    g: &GroupedOutcomes,
    unprivileged: usize,
    privileged: usize,
    th: &Thresholds,
) -> Result<SpdMulticlass> {
    if g.n_classes() < 2 {
        return Err(FairnessError::TooFewGroups {
            needed: 2,
            found: g.n_classes(),
        });
    }
    let per_class = (0..g.n_classes())
        .map(|c| {
            statistical_parity_difference(g, unprivileged, privileged, c, th).map(|mut r| {
                r.scope = Scope::Multiclass;
                r.name = format!("statistical_parity_difference[class={c}]");
                r
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let satisfied = per_class
        .iter()
        .any(|r| r.exact.as_ref().is_some_and(|v| round2(v).is_zero()));
    Ok(SpdMulticlass { per_class, satisfied })
}

struct RateSweep {
    rates: Vec<(String, Rational)>,
    notes: Vec<String>,
}

/// Collects a rate per (subgroup, class) cell, skipping undefined cells.
fn sweep(
    g: &GroupedOutcomes,
    classes: &[usize],
    what: &str,
    rate: impl Fn(usize, usize) -> Option<Rational>,
) -> RateSweep {
    let mut out = RateSweep {
        rates: Vec::new(),
        notes: Vec::new(),
    };
    for s in 0..g.n_groups() {
        for &c in classes {
            let key = if classes.len() == 1 {
                g.labels[s].clone()
            } else {
                format!("{}|class={c}", g.labels[s])
            };
            match rate(s, c) {
                Some(r) => out.rates.push((key, r)),
                None => out.notes.push(format!("{key} skipped: no {what}")),
            }
        }
    }
    out
}

fn spread(sw: &RateSweep, name: &str) -> Option<(Rational, Rational, BTreeMap<String, f64>)> {
    let (lo, hi) = min_max(sw.rates.iter().map(|(_, r)| *r))?;
    let components = BTreeMap::from([(format!("max_{name}"), to_f64(&hi)), (format!("min_{name}"), to_f64(&lo))]);
    Some((lo, hi, components))
}

/// `max_s TPR_s − min_s TPR_s` for the favorable class.
pub fn equal_opportunity_diff(g: &GroupedOutcomes, positive: usize, th: &Thresholds) -> Result<MetricResult> {
    g.check_class(positive)?;
    let sw = sweep(g, &[positive], "actual positives", |s, c| g.tpr(s, c));
    let (lo, hi, components) = spread(&sw, "tpr").ok_or(FairnessError::NoPositives)?;
    Ok(difference_result(
        "equal_opportunity_difference",
        Scope::Binary,
        hi - lo,
        th,
        components,
        sw.notes,
    ))
}

/// `|max TPR − min TPR|` over every (subgroup, class) cell.
pub fn equal_opportunity_multiclass(g: &GroupedOutcomes, th: &Thresholds) -> Result<MetricResult> {
    let classes: Vec<usize> = (0..g.n_classes()).collect();
    let sw = sweep(g, &classes, "actual positives", |s, c| g.tpr(s, c));
    let (lo, hi, components) = spread(&sw, "tpr").ok_or(FairnessError::NoPositives)?;
    Ok(difference_result(
        "equal_opportunity_difference",
        Scope::Multiclass,
        (hi - lo).abs(),
        th,
        components,
        sw.notes,
    ))
}

fn odds(g: &GroupedOutcomes, classes: &[usize], scope: Scope, th: &Thresholds) -> Result<MetricResult> {
    let tp = sweep(g, classes, "actual positives", |s, c| g.tpr(s, c));
    let fp = sweep(g, classes, "actual negatives", |s, c| g.fpr(s, c));
    let (tlo, thi, mut components) = spread(&tp, "tpr").ok_or(FairnessError::NoPositives)?;
    let (flo, fhi, fc) = spread(&fp, "fpr").ok_or(FairnessError::NoNegatives)?;
    components.extend(fc);
    let tpr_diff = (thi - tlo).abs();
    let fpr_diff = (fhi - flo).abs();
    components.insert("tpr_difference".into(), to_f64(&tpr_diff));
    components.insert("fpr_difference".into(), to_f64(&fpr_diff));
    let mut notes = tp.notes;
    notes.extend(fp.notes);
    Ok(difference_result(
        "equalized_odds_difference",
        scope,
        (tpr_diff - fpr_diff).abs(),
        th,
        components,
        notes,
    ))
}

/// `|TPR_diff − FPR_diff|`, each difference taken across subgroups for the
/// favorable class. This subtractive combination is the tabulated one; it
/// is not the more common `max(TPR_diff, FPR_diff)`.
pub fn equalized_odds_diff(g: &GroupedOutcomes, positive: usize, th: &Thresholds) -> Result<MetricResult> {
    g.check_class(positive)?;
    odds(g, &[positive], Scope::Binary, th)
}

/// `| |max TPR − min TPR| − |max FPR − min FPR| |` over all (subgroup, class) cells.
pub fn equalized_odds_multiclass(g: &GroupedOutcomes, th: &Thresholds) -> Result<MetricResult> {
    let classes: Vec<usize> = (0..g.n_classes()).collect();
    odds(g, &classes, Scope::Multiclass, th)
}

/// Which classes a worst-case ratio looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassMode {
    /// Only the favorable class.
    Binary(usize),
    /// Every class; the overall value is the minimum over classes.
    Multiclass,
}

impl ClassMode {
    fn classes(self, n_classes: usize) -> Vec<usize> {
        match self {
            ClassMode::Binary(c) => vec![c],
            ClassMode::Multiclass => (0..n_classes).collect(),
        }
    }

    fn scope(self, worst_case: bool) -> Scope {
        match (self, worst_case) {
            (_, true) => Scope::WorstCase,
            (ClassMode::Binary(_), false) => Scope::Binary,
            (ClassMode::Multiclass, false) => Scope::Multiclass,
        }
    }
}

/// Per class min/max over subgroups of `P(Ŷ=c | s)`, then min over classes.
fn pass_rate_ratio(g: &GroupedOutcomes, mode: ClassMode, name: &str, th: &Thresholds, scope: Scope) -> Result<MetricResult> {
    if let ClassMode::Binary(c) = mode {
        g.check_class(c)?;
    }
    let present: Vec<usize> = (0..g.n_groups()).filter(|&s| g.total(s) > 0).collect();
    let mut notes: Vec<String> = (0..g.n_groups())
        .filter(|&s| g.total(s) == 0)
        .map(|s| format!("{} skipped: no rows", g.labels[s]))
        .collect();
    if present.len() < 2 {
        return Err(FairnessError::TooFewGroups {
            needed: 2,
            found: present.len(),
        });
    }
    let mut components = BTreeMap::new();
    let mut overall: Option<Rational> = None;
    for c in mode.classes(g.n_classes()) {
        let (lo, hi) = min_max(present.iter().map(|&s| g.pass_rate(s, c).unwrap())).unwrap();
        if hi.is_zero() {
            notes.push(format!("class {c} skipped: never predicted"));
            continue;
        }
        let r = lo / hi;
        components.insert(format!("class={c}"), to_f64(&r));
        overall = Some(overall.map_or(r, |o| o.min(r)));
    }
    let value = overall.ok_or(FairnessError::ZeroMaxRate)?;
    Ok(ratio_result(name, scope, Some(value), th, components, notes))
}

/// Worst-case ratio of pass rates across subgroups.
pub fn demographic_parity_ratio(g: &GroupedOutcomes, mode: ClassMode, th: &Thresholds) -> Result<MetricResult> {
    pass_rate_ratio(g, mode, "demographic_parity_ratio", th, mode.scope(false))
}

/// Demographic parity ratio over outcomes built from the `L = 1` rows only
/// (see [`GroupedOutcomes::from_rows`]'s mask).
pub fn conditional_statistical_parity_ratio(
    conditioned: &GroupedOutcomes,
    mode: ClassMode,
    th: &Thresholds,
) -> Result<MetricResult> {
    let usable = (0..conditioned.n_groups()).filter(|&s| conditioned.total(s) > 0).count();
    if usable < 2 {
        return Err(FairnessError::NoConditionedRows);
    }
    pass_rate_ratio(
        conditioned,
        mode,
        "conditional_statistical_parity_ratio",
        th,
        mode.scope(false),
    )
}

/// Per output class, min/max over subgroups of `P(Ŷ=y_k | s)`; overall
/// minimum over classes.
pub fn equalized_odds_ratio_multiclass(g: &GroupedOutcomes, th: &Thresholds) -> Result<MetricResult> {
    if g.n_classes() < 2 {
        return Err(FairnessError::TooFewGroups {
            needed: 2,
            found: g.n_classes(),
        });
    }
    pass_rate_ratio(g, ClassMode::Multiclass, "equalized_odds_ratio", th, Scope::Multiclass)
}

/// min TPR / max TPR over subgroups (binary) or over all (subgroup, class)
/// cells (multiclass).
pub fn equal_opportunity_ratio(g: &GroupedOutcomes, mode: ClassMode, th: &Thresholds) -> Result<MetricResult> {
    if let ClassMode::Binary(c) = mode {
        g.check_class(c)?;
    }
    let sw = sweep(g, &mode.classes(g.n_classes()), "actual positives", |s, c| g.tpr(s, c));
    let (lo, hi, components) = spread(&sw, "tpr").ok_or(FairnessError::NoPositives)?;
    let mut notes = sw.notes;
    if hi.is_zero() {
        notes.push("every TPR is zero".into());
        return Err(FairnessError::ZeroMaxRate);
    }
    Ok(ratio_result(
        "equal_opportunity_ratio",
        mode.scope(false),
        Some(lo / hi),
        th,
        components,
        notes,
    ))
}

/// Pairwise four-fifths rule across intersectional subgroups.
///
/// `families` pairs a name (such as `2-way`) with the outcomes of every
/// subgroup of that interaction order. Within a family each unordered pair
/// of subgroups contributes the smaller of its two directional pass-rate
/// ratios; pairs where either rate is zero are skipped. The result is the
/// minimum over all families, with per-family minima as components.
pub fn worst_case_disparate_impact(
    families: &[(String, GroupedOutcomes)],
    mode: ClassMode,
    th: &Thresholds,
) -> Result<MetricResult> {
    let mut components = BTreeMap::new();
    let mut notes = Vec::new();
    let mut overall: Option<Rational> = None;
    for (name, g) in families {
        let present: Vec<usize> = (0..g.n_groups()).filter(|&s| g.total(s) > 0).collect();
        if present.len() < 2 {
            notes.push(format!("{name} skipped: fewer than two non-empty subgroups"));
            continue;
        }
        let mut family_min: Option<Rational> = None;
        let mut skipped = 0usize;
        for c in mode.classes(g.n_classes()) {
            let rates: Vec<Rational> = present.iter().map(|&s| g.pass_rate(s, c).unwrap()).collect();
            for i in 0..rates.len() {
                for j in i + 1..rates.len() {
                    let (a, b) = (rates[i], rates[j]);
                    if a.is_zero() || b.is_zero() {
                        skipped += 1;
                        continue;
                    }
                    let r = (a / b).min(b / a);
                    family_min = Some(family_min.map_or(r, |m| m.min(r)));
                }
            }
        }
        if skipped > 0 {
            notes.push(format!("{name}: {skipped} pair(s) with a zero rate skipped"));
        }
        if let Some(m) = family_min {
            components.insert(name.clone(), to_f64(&m));
            overall = Some(overall.map_or(m, |o| o.min(m)));
        }
    }
    let value = overall.ok_or(FairnessError::ZeroMaxRate)?;
    Ok(ratio_result(
        "worst_case_disparate_impact",
        Scope::WorstCase,
        Some(value),
        th,
        components,
        notes,
    ))
}

/// Outcome of one metric inside an audit: a result or the reason it could
/// not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum MetricEntry {
    Computed(MetricResult),
    Skipped { skipped: String },
}

impl MetricEntry {
    pub fn result(&self) -> Option<&MetricResult> {
        match self {
            MetricEntry::Computed(r) => Some(r),
            MetricEntry::Skipped { .. } => None,
        }
    }
}

impl From<Result<MetricResult>> for MetricEntry {
    fn from(r: Result<MetricResult>) -> Self {
        match r {
            Ok(m) => MetricEntry::Computed(m),
            Err(e) => MetricEntry::Skipped { skipped: e.to_string() },
        }
    }
}

/// Everything an audit computed, keyed for stable serialization.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FairnessReport {
    /// attribute → metric → entry
    pub attributes: BTreeMap<String, BTreeMap<String, MetricEntry>>,
    /// attribute → whether some class has SPD rounding to zero (multiclass only)
    pub spd_satisfied: BTreeMap<String, bool>,
    /// Worst-case metrics over intersectional subgroups.
    pub intersectional: BTreeMap<String, MetricEntry>,
    pub notes: Vec<String>,
}

impl FairnessReport {
    /// Flattened rows: (attribute, metric, entry).
    pub fn rows(&self) -> Vec<(&str, &str, &MetricEntry)> {
        let mut out = Vec::new();
        for (attr, metrics) in &self.attributes {
            for (m, e) in metrics {
                out.push((attr.as_str(), m.as_str(), e));
            }
        }
        for (m, e) in &self.intersectional {
            out.push(("intersectional", m.as_str(), e));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditOptions {
    pub thresholds: Thresholds,
    /// Favorable class for binary metrics.
    pub positive_class: usize,
    /// Intersectional cells with fewer rows are left out of worst-case metrics.
    pub min_cell_rows: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            positive_class: 1,
            min_cell_rows: 1,
        }
    }
}

/// Outcomes per intersectional cell of every `order`-way attribute tuple,
/// pooled into one family.
pub fn intersectional_family(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
    groups: &SensitiveGroups,
    order: usize,
    mask: Option<&[bool]>,
    min_cell_rows: u64,
) -> Result<GroupedOutcomes> {
    let m = groups.names.len();
    let n = y_true.len();
    let mut labels = Vec::new();
    let mut cells = Vec::new();
    for tuple in crate::reweight::combinations(m, order) {
        let n_cells = 1usize << order;
        let key: Vec<usize> = (0..n)
            .map(|i| {
                tuple
                    .iter()
                    .fold(0usize, |acc, &a| (acc << 1) | groups.values[a][i] as usize)
            })
            .collect();
        let tuple_labels: Vec<String> = (0..n_cells)
            .map(|cell| {
                tuple
                    .iter()
                    .enumerate()
                    .map(|(pos, &a)| {
                        let bit = (cell >> (order - 1 - pos)) & 1;
                        format!("{}={}", groups.names[a], groups.bucket_labels[a][bit])
                    })
                    .collect::<Vec<_>>()
                    .join("&")
            })
            .collect();
        let g = GroupedOutcomes::from_rows(y_true, y_pred, &key, tuple_labels, n_classes, mask)?;
        for s in 0..g.n_groups() {
            if g.total(s) >= min_cell_rows.max(1) {
                labels.push(g.labels[s].clone());
                cells.push(g.cells[s].clone());
            }
        }
    }
    GroupedOutcomes::from_counts(labels, cells)
}

/// Runs every applicable metric for each sensitive attribute and the
/// worst-case metrics over 2-way and 3-way intersections.
pub fn audit(
    y_true: &[usize],
    y_pred: &[usize],
    n_classes: usize,
    groups: &SensitiveGroups,
    legitimate: Option<&[bool]>,
    opts: &AuditOptions,
) -> Result<FairnessReport> {
    let th = &opts.thresholds;
    if th.grid.is_empty() || th.grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FairnessError::BadGrid);
    }
    let pos = opts.positive_class;
    let binary = n_classes == 2;
    let mode = if binary {
        ClassMode::Binary(pos)
    } else {
        ClassMode::Multiclass
    };
    let mut report = FairnessReport::default();
    for (a, name) in groups.names.iter().enumerate() {
        let labels = groups.bucket_labels[a].to_vec();
        let key: Vec<usize> = groups.values[a].iter().map(|&v| v as usize).collect();
        let g = GroupedOutcomes::from_rows(y_true, y_pred, &key, labels.clone(), n_classes, None)?;
        let privileged = groups.privileged[a] as usize;
        let unprivileged = 1 - privileged;
        let mut metrics: BTreeMap<String, MetricEntry> = BTreeMap::new();
        let put = |m: &mut BTreeMap<String, MetricEntry>, key: &str, r: Result<MetricResult>| {
            m.insert(key.to_string(), r.into());
        };
        if binary {
            put(&mut metrics, "disparate_impact", disparate_impact(&g, unprivileged, privileged, pos, th));
            put(
                &mut metrics,
                "statistical_parity_difference",
                statistical_parity_difference(&g, unprivileged, privileged, pos, th),
            );
            put(&mut metrics, "equal_opportunity_difference", equal_opportunity_diff(&g, pos, th));
            put(&mut metrics, "equalized_odds_difference", equalized_odds_diff(&g, pos, th));
        } else {
            match disparate_impact_multiclass(&g, th) {
                Ok(per_class) => {
                    for r in per_class {
                        metrics.insert(r.name.clone(), MetricEntry::Computed(r));
                    }
                }
                Err(e) => put(&mut metrics, "disparate_impact", Err(e)),
            }
            match spd_multiclass(&g, unprivileged, privileged, th) {
                Ok(spd) => {
                    report.spd_satisfied.insert(name.clone(), spd.satisfied);
                    for r in spd.per_class {
                        metrics.insert(r.name.clone(), MetricEntry::Computed(r));
                    }
                }
                Err(e) => put(&mut metrics, "statistical_parity_difference", Err(e)),
            }
            put(&mut metrics, "equal_opportunity_difference", equal_opportunity_multiclass(&g, th));
            put(&mut metrics, "equalized_odds_difference", equalized_odds_multiclass(&g, th));
        }
        put(&mut metrics, "demographic_parity_ratio", demographic_parity_ratio(&g, mode, th));
        put(&mut metrics, "equal_opportunity_ratio", equal_opportunity_ratio(&g, mode, th));
        put(&mut metrics, "equalized_odds_ratio", equalized_odds_ratio_multiclass(&g, th));
        if let Some(mask) = legitimate {
            let gc = GroupedOutcomes::from_rows(y_true, y_pred, &key, labels, n_classes, Some(mask))?;
            put(
                &mut metrics,
                "conditional_statistical_parity_ratio",
                conditional_statistical_parity_ratio(&gc, mode, th),
            );
        }
        report.attributes.insert(name.clone(), metrics);
    }

    let m = groups.names.len();
    let orders: Vec<usize> = [2, 3].into_iter().filter(|&k| k <= m).collect();
    if orders.is_empty() {
        if m > 0 {
            report
                .notes
                .push("intersectional metrics need at least two sensitive attributes".into());
        }
        return Ok(report);
    }
    let mut families = Vec::new();
    let mut conditioned = Vec::new();
    for &k in &orders {
        families.push((
            format!("{k}-way"),
            intersectional_family(y_true, y_pred, n_classes, groups, k, None, opts.min_cell_rows)?,
        ));
        if let Some(mask) = legitimate {
            conditioned.push(intersectional_family(
                y_true,
                y_pred,
                n_classes,
                groups,
                k,
                Some(mask),
                opts.min_cell_rows,
            )?);
        }
    }
    let merge = |gs: Vec<&GroupedOutcomes>| {
        let mut labels = Vec::new();
        let mut cells = Vec::new();
        for g in gs {
            labels.extend(g.labels.iter().cloned());
            cells.extend(g.cells.iter().cloned());
        }
        GroupedOutcomes::from_counts(labels, cells)
    };
    let merged = merge(families.iter().map(|(_, g)| g).collect())?;
    let worst = |r: Result<MetricResult>| -> MetricEntry {
        r.map(|mut m| {
            m.scope = Scope::WorstCase;
            m
        })
        .into()
    };
    let inter = &mut report.intersectional;
    inter.insert("demographic_parity_ratio".into(), worst(demographic_parity_ratio(&merged, mode, th)));
    inter.insert(
        "worst_case_disparate_impact".into(),
        worst(worst_case_disparate_impact(&families, mode, th)),
    );
    inter.insert("equal_opportunity_ratio".into(), worst(equal_opportunity_ratio(&merged, mode, th)));
    inter.insert("equalized_odds_ratio".into(), worst(equalized_odds_ratio_multiclass(&merged, th)));
    if !conditioned.is_empty() {
        let merged_c = merge(conditioned.iter().collect())?;
        inter.insert(
            "conditional_statistical_parity_ratio".into(),
            worst(conditional_statistical_parity_ratio(&merged_c, mode, th)),
        );
    }
    Ok(report)
}

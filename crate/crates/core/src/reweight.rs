//! Interaction-based sample weights.
//!
//! Every pair and triple of dichotomized sensitive attributes is tested for
//! dependence with the target by a chi-squared test. For each significant
//! tuple, a row's probability is the share of rows in its intersectional
//! cell that carry the row's own target class. A row's weight is the
//! probability that at least one of its significant interactions occurs,
//! `1 − ∏(1 − pᵢ)`, and rows touched by no significant interaction keep
//! weight 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::dataset::SensitiveGroups;

#[derive(Debug, Error, PartialEq)]
pub enum ReweightError {
    #[error("contingency table is degenerate: {0}")]
    DegenerateTable(String),
    #[error("cell {0} has no rows")]
    EmptyCell(String),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("interaction order must be 2 or 3, got {0}")]
    InvalidOrder(usize),
}

type Result<T> = std::result::Result<T, ReweightError>;

/// All `k`-subsets of `0..m` in lexicographic order.
pub fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            go(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= m {
        go(0, m, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Observed counts, rows × columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub observed: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(observed: Vec<Vec<u64>>) -> Self {
        Self { observed }
    }

    pub fn n_rows(&self) -> usize {
        self.observed.len()
    }

    pub fn n_cols(&self) -> usize {
        self.observed.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.observed.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<u64> {
        self.observed.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_totals(&self) -> Vec<u64> {
        (0..self.n_cols())
            .map(|j| self.observed.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// `E_ij = R_i·C_j / n`.
    pub fn expected(&self) -> Vec<Vec<f64>> {
        let n = self.total() as f64;
        let cols = self.col_totals();
        self.row_totals()
            .iter()
            .map(|&r| cols.iter().map(|&c| r as f64 * c as f64 / n).collect())
            .collect()
    }

    pub fn degrees_of_freedom(&self) -> usize {
        self.n_rows().saturating_sub(1) * self.n_cols().saturating_sub(1)
    }

    fn transpose(&self) -> Self {
        Self {
            observed: (0..self.n_cols())
                .map(|j| self.observed.iter().map(|r| r[j]).collect())
                .collect(),
        }
    }

    /// Removes all-zero rows and columns.
    pub fn drop_empty(&self) -> Self {
        let cols = self.col_totals();
        let keep: Vec<usize> = (0..self.n_cols()).filter(|&j| cols[j] > 0).collect();
        Self {
            observed: self
                .observed
                .iter()
                .filter(|r| r.iter().any(|&v| v > 0))
                .map(|r| keep.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    /// Pools sparse rows (or columns) until every expected count reaches
    /// `min_expected` or the table is 2×2.
    ///
    /// Each round works on the dimension whose smallest margin is smaller.
    /// All sparse lines are summed into one; a lone sparse line joins the
    /// smallest other line (ties broken by the count vector itself). The
    /// rule looks only at the multiset of lines, so relabeling or reordering
    /// the attribute cells cannot change the outcome.
    pub fn merge_sparse(&self, min_expected: f64) -> Self {
        let mut t = self.drop_empty();
        loop {
            if t.n_rows() < 2 || t.n_cols() < 2 {
                return t;
            }
            let n = t.total() as f64;
            let rows = t.row_totals();
            let cols = t.col_totals();
            let min_r = *rows.iter().min().unwrap() as f64;
            let min_c = *cols.iter().min().unwrap() as f64;
            if min_r * min_c / n >= min_expected {
                return t;
            }
            let by_rows = (min_r <= min_c && t.n_rows() > 2) || t.n_cols() <= 2;
            if by_rows && t.n_rows() <= 2 {
                return t;
            }
            t = if by_rows {
                pool_lines(&t, min_c, min_expected)
            } else {
                pool_lines(&t.transpose(), min_r, min_expected).transpose()
            };
        }
    }
}

fn pool_lines(t: &ContingencyTable, other_min: f64, min_expected: f64) -> ContingencyTable {
    let n = t.total() as f64;
    let totals = t.row_totals();
    let sparse: Vec<usize> = (0..t.n_rows())
        .filter(|&i| totals[i] as f64 * other_min / n < min_expected)
        .collect();
    let mut pooled = vec![0u64; t.n_cols()];
    for &i in &sparse {
        for (p, v) in pooled.iter_mut().zip(&t.observed[i]) {
            *p += v;
        }
    }
    let mut rest: Vec<Vec<u64>> = (0..t.n_rows())
        .filter(|i| !sparse.contains(i))
        .map(|i| t.observed[i].clone())
        .collect();
    let pooled_total: u64 = pooled.iter().sum();
    let still_sparse = pooled_total as f64 * other_min / n < min_expected;
    if (sparse.len() == 1 || still_sparse) && !rest.is_empty() {
        let k = (0..rest.len())
            .min_by(|&a, &b| {
                let ta: u64 = rest[a].iter().sum();
                let tb: u64 = rest[b].iter().sum();
                ta.cmp(&tb).then_with(|| rest[a].cmp(&rest[b]))
            })
            .unwrap();
        for (p, v) in pooled.iter_mut().zip(&rest[k]) {
            *p += v;
        }
        rest.remove(k);
    }
    rest.push(pooled);
    ContingencyTable::new(rest)
}

/// Upper 5% points of the chi-squared distribution for df = 1..=30.
const CHI2_CRIT_05: [f64; 30] = [
    3.841, 5.991, 7.815, 9.488, 11.070, 12.592, 14.067, 15.507, 16.919, 18.307, 19.675, 21.026, 22.362, 23.685, 24.996,
    26.296, 27.587, 28.869, 30.144, 31.410, 32.671, 33.924, 35.172, 36.415, 37.652, 38.885, 40.113, 41.337, 42.557,
    43.773,
];

/// Critical value at significance `alpha`: the table for α = 0.05 and
/// df ≤ 30, the inverse CDF otherwise.
pub fn chi2_critical(df: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ReweightError::InvalidAlpha(alpha));
    }
    if df == 0 {
        return Err(ReweightError::DegenerateTable("zero degrees of freedom".into()));
    }
    if alpha == 0.05 && df <= 30 {
        return Ok(CHI2_CRIT_05[df - 1]);
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| ReweightError::DegenerateTable(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub df: usize,
    pub critical: f64,
    pub significant: bool,
}

/// `Σ (O − E)² / E` with its significance at `alpha`. The table is used as
/// given; every expected count must be positive.
pub fn chi2_statistic(t: &ContingencyTable, alpha: f64) -> Result<ChiSquaredTest> {
    if t.n_rows() < 2 || t.n_cols() < 2 {
        return Err(ReweightError::DegenerateTable(format!(
            "{}×{} table",
            t.n_rows(),
            t.n_cols()
        )));
    }
    let e = t.expected();
    if e.iter().flatten().any(|&v| v <= 0.0) {
        return Err(ReweightError::DegenerateTable("an expected count is zero".into()));
    }
    let statistic = t
        .observed
        .iter()
        .zip(&e)
        .flat_map(|(o, e)| o.iter().zip(e).map(|(&o, &e)| (o as f64 - e) * (o as f64 - e) / e))
        .sum();
    let df = t.degrees_of_freedom();
    let critical = chi2_critical(df, alpha)?;
    Ok(ChiSquaredTest {
        statistic,
        df,
        critical,
        significant: statistic > critical,
    })
}

/// Row `i`'s cell index for an attribute tuple: bucket bits, first
/// attribute most significant.
fn cell_of(groups: &SensitiveGroups, attrs: &[usize], i: usize) -> usize {
    attrs
        .iter()
        .fold(0usize, |acc, &a| (acc << 1) | groups.values[a][i] as usize)
}

/// `|rows in cell with target = class| / |rows in cell|`.
pub fn interaction_probability(
    groups: &SensitiveGroups,
    target: &[usize],
    attrs: &[usize],
    cell: &[u8],
    class: usize,
) -> Result<f64> {
    if !(2..=3).contains(&attrs.len()) {
        return Err(ReweightError::InvalidOrder(attrs.len()));
    }
    if cell.len() != attrs.len() {
        return Err(ReweightError::LengthMismatch(attrs.len(), cell.len()));
    }
    let mut in_cell = 0u64;
    let mut hit = 0u64;
    for (i, &t) in target.iter().enumerate() {
        if attrs.iter().zip(cell).all(|(&a, &v)| groups.values[a][i] == v) {
            in_cell += 1;
            if t == class {
                hit += 1;
            }
        }
    }
    if in_cell == 0 {
        let label: Vec<String> = attrs
            .iter()
            .zip(cell)
            .map(|(&a, v)| format!("{}={v}", groups.names[a]))
            .collect();
        return Err(ReweightError::EmptyCell(label.join("&")));
    }
    Ok(hit as f64 / in_cell as f64)
}

/// `1 − ∏(1 − pᵢ)`; an empty list gives 1.
pub fn intersectional_weight(probabilities: &[f64]) -> f64 {
    if probabilities.is_empty() {
        return 1.0;
    }
    1.0 - probabilities.iter().map(|p| 1.0 - p).product::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    /// Bucket per attribute of the tuple.
    pub cell: Vec<u8>,
    pub label: String,
    pub rows: u64,
    /// Rows of each target class inside the cell.
    pub class_counts: Vec<u64>,
}

impl CellCounts {
    pub fn probability(&self, class: usize) -> Option<f64> {
        (self.rows > 0).then(|| self.class_counts[class] as f64 / self.rows as f64)
    }
}

/// One tested attribute tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub attributes: Vec<String>,
    #[serde(skip)]
    pub indices: Vec<usize>,
    /// `None` when the table could not be tested.
    pub test: Option<ChiSquaredTest>,
    pub significant: bool,
    pub cells: Vec<CellCounts>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReweightOptions {
    pub alpha: f64,
    pub min_expected: f64,
}

impl Default for ReweightOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_expected: 5.0,
        }
    }
}

/// Builds the (cell × class) table, merges sparse lines and tests it.
pub fn test_interaction(
    groups: &SensitiveGroups,
    target: &[usize],
    n_classes: usize,
    attrs: &[usize],
    opts: &ReweightOptions,
) -> Result<Interaction> {
    let k = attrs.len();
    if !(2..=3).contains(&k) {
        return Err(ReweightError::InvalidOrder(k));
    }
    let n_cells = 1usize << k;
    let mut observed = vec![vec![0u64; n_classes]; n_cells];
    for (i, &t) in target.iter().enumerate() {
        observed[cell_of(groups, attrs, i)][t] += 1;
    }
    let cells = (0..n_cells)
        .map(|cell| {
            let bits: Vec<u8> = (0..k).map(|pos| ((cell >> (k - 1 - pos)) & 1) as u8).collect();
            let label = attrs
                .iter()
                .zip(&bits)
                .map(|(&a, &b)| format!("{}={}", groups.names[a], groups.bucket_labels[a][b as usize]))
                .collect::<Vec<_>>()
                .join("&");
            CellCounts {
                cell: bits,
                label,
                rows: observed[cell].iter().sum(),
                class_counts: observed[cell].clone(),
            }
        })
        .collect();
    let table = ContingencyTable::new(observed).merge_sparse(opts.min_expected);
    let mut notes = Vec::new();
    let test = match chi2_statistic(&table, opts.alpha) {
        Ok(t) => {
            if table.expected().iter().flatten().any(|&e| e < opts.min_expected) {
                notes.push(format!("expected count below {} after merging", opts.min_expected));
            }
            Some(t)
        }
        Err(ReweightError::DegenerateTable(why)) => {
            notes.push(format!("not tested: {why}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(Interaction {
        attributes: attrs.iter().map(|&a| groups.names[a].clone()).collect(),
        indices: attrs.to_vec(),
        significant: test.is_some_and(|t| t.significant),
        test,
        cells,
        notes,
    })
}

/// Per-row weights plus the full record of tested interactions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWeights {
    pub weights: Vec<f64>,
    pub interactions: Vec<Interaction>,
    /// Per row, how many significant interactions contributed.
    pub contributions: Vec<usize>,
}

impl SampleWeights {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            interactions: Vec::new(),
            contributions: vec![0; n],
        }
    }

    pub fn n_tested(&self) -> usize {
        self.interactions.len()
    }

    pub fn n_significant(&self) -> usize {
        self.interactions.iter().filter(|i| i.significant).count()
    }
}

/// Tests all 2- and 3-attribute tuples and assigns union weights.
pub fn assign_weights(
    groups: &SensitiveGroups,
    target: &[usize],
    n_classes: usize,
    opts: &ReweightOptions,
) -> Result<SampleWeights> {
    if groups.n_rows() != target.len() && !groups.names.is_empty() {
        return Err(ReweightError::LengthMismatch(groups.n_rows(), target.len()));
    }
    let m = groups.names.len();
    let tuples: Vec<Vec<usize>> = combinations(m, 2).into_iter().chain(combinations(m, 3)).collect();
    let interactions = tuples
        .par_iter()
        .map(|t| test_interaction(groups, target, n_classes, t, opts))
        .collect::<Result<Vec<_>>>()?;
    let n = target.len();
    let mut weights = Vec::with_capacity(n);
    let mut contributions = Vec::with_capacity(n);
    for (i, &class) in target.iter().enumerate() {
        let ps: Vec<f64> = interactions
            .iter()
            .filter(|it| it.significant)
            .filter_map(|it| it.cells[cell_of(groups, &it.indices, i)].probability(class))
            .collect();
        contributions.push(ps.len());
        weights.push(intersectional_weight(&ps));
    }
    Ok(SampleWeights {
        weights,
        interactions,
        contributions,
    })
}

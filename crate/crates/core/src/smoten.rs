//! SMOTE-N oversampling for all-nominal rows.
//!
//! Distances between rows come from the Value Difference Metric: two
//! category values of one feature are close when they are spread across the
//! classes in similar proportions. A synthetic row copies, feature by
//! feature, the most common value among the seed row's nearest same-class
//! neighbours.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CategoricalDataset, MISSING};

#[derive(Debug, Error, PartialEq)]
pub enum SmotenError {
    #[error("feature {feature} has no training rows with value {value}")]
    UnknownValue { feature: usize, value: u32 },
    #[error("row lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("row {0} contains a missing value; impute before resampling")]
    MissingValue(usize),
    #[error("dataset has no target")]
    NoTarget,
}

/// Per feature, per category value: class-conditional counts.
#[derive(Debug, Clone, PartialEq)]
pub struct VdmTable {
    k_exponent: f64,
    /// `counts[f][v][c]`
    counts: Vec<Vec<Vec<u64>>>,
    /// `totals[f][v]`
    totals: Vec<Vec<u64>>,
}

impl VdmTable {
    /// Counts value/class co-occurrences over `rows`.
    ///
    /// Panics if a row is shorter than `cardinalities` or holds a code out of
    /// range; missing codes are skipped.
    pub fn build(
        rows: &[Vec<u32>],
        labels: &[usize],
        n_classes: usize,
        cardinalities: &[usize],
        k_exponent: f64,
    ) -> Self {
        let mut counts: Vec<Vec<Vec<u64>>> = cardinalities
            .iter()
            .map(|&card| vec![vec![0; n_classes]; card])
            .collect();
        for (row, &label) in rows.iter().zip(labels) {
            for (f, &v) in row.iter().enumerate() {
                if v != MISSING {
                    counts[f][v as usize][label] += 1;
                }
            }
        }
        let totals = counts
            .iter()
            .map(|feat| feat.iter().map(|cls| cls.iter().sum()).collect())
            .collect();
        Self {
            k_exponent,
            counts,
            totals,
        }
    }

    /// Builds a table straight from counts, `counts[f][v][c]`.
    pub fn from_counts(counts: Vec<Vec<Vec<u64>>>, k_exponent: f64) -> Self {
        let totals = counts
            .iter()
            .map(|feat| feat.iter().map(|cls| cls.iter().sum()).collect())
            .collect();
        Self {
            k_exponent,
            counts,
            totals,
        }
    }

    pub fn n_features(&self) -> usize {
        self.counts.len()
    }

    pub fn k_exponent(&self) -> f64 {
        self.k_exponent
    }

    fn check(&self, feature: usize, v: u32) -> Result<(), SmotenError> {
        let known = self
            .totals
            .get(feature)
            .and_then(|t| t.get(v as usize))
            .is_some_and(|&c| c > 0);
        if known {
            Ok(())
        } else {
            Err(SmotenError::UnknownValue { feature, value: v })
        }
    }

    fn delta_unchecked(&self, feature: usize, v1: u32, v2: u32) -> f64 {
        if v1 == v2 {
            return 0.0;
        }
        let (a, b) = (&self.counts[feature][v1 as usize], &self.counts[feature][v2 as usize]);
        let (ta, tb) = (
            self.totals[feature][v1 as usize] as f64,
            self.totals[feature][v2 as usize] as f64,
        );
        a.iter()
            .zip(b)
            .map(|(&ca, &cb)| {
                let d = (ca as f64 / ta - cb as f64 / tb).abs();
                if self.k_exponent == 1.0 {
                    d
                } else {
                    d.powf(self.k_exponent)
                }
            })
            .sum()
    }

    /// Card × card delta lookup for one feature; unseen values hold NaN.
    fn delta_matrix(&self, feature: usize) -> Vec<f64> {
        let card = self.totals[feature].len();
        let mut m = vec![f64::NAN; card * card];
        for a in 0..card {
            for b in 0..card {
                if self.totals[feature][a] > 0 && self.totals[feature][b] > 0 {
                    m[a * card + b] = self.delta_unchecked(feature, a as u32, b as u32);
                }
            }
        }
        m
    }
}

/// Σ over classes of |C1i/C1 − C2i/C2|^k for two values of one feature.
pub fn vdm_delta(table: &VdmTable, feature: usize, v1: u32, v2: u32) -> Result<f64, SmotenError> {
    table.check(feature, v1)?;
    table.check(feature, v2)?;
    Ok(table.delta_unchecked(feature, v1, v2))
}

/// Sum of per-feature deltas between two rows.
pub fn vdm_distance(table: &VdmTable, row_a: &[u32], row_b: &[u32]) -> Result<f64, SmotenError> {
    if row_a.len() != row_b.len() || row_a.len() != table.n_features() {
        return Err(SmotenError::LengthMismatch {
            left: row_a.len(),
            right: if row_a.len() != row_b.len() {
                row_b.len()
            } else {
                table.n_features()
            },
        });
    }
    row_a
        .iter()
        .zip(row_b)
        .enumerate()
        .map(|(f, (&a, &b))| vdm_delta(table, f, a, b))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub k_neighbors: usize,
    pub k_exponent: f64,
    pub seed: u64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            k_exponent: 1.0,
            seed: 0,
        }
    }
}

/// Where a synthetic row came from. Indices refer to rows of the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntheticRow {
    pub class: usize,
    pub seed_row: usize,
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOutcome {
    /// Original rows first, synthetic rows appended.
    pub dataset: CategoricalDataset,
    pub synthetic: Vec<SyntheticRow>,
    pub warnings: Vec<String>,
}

const ORDER_STREAM_BASE: u64 = 1 << 40;

/// Oversamples every present class up to the majority class count.
///
/// Seed rows are visited round-robin in a seeded shuffle of each class.
/// Voting ties are broken uniformly at random from a per-synthetic-row RNG
/// stream, so results do not depend on thread scheduling.
pub fn smoten_resample(ds: &CategoricalDataset, plan: &ResamplePlan) -> Result<ResampleOutcome, SmotenError> {
    if ds.target().len() != ds.n_rows() || ds.n_classes() == 0 {
        return Err(SmotenError::NoTarget);
    }
    if let Some(i) = ds.rows().iter().position(|r| r.contains(&MISSING)) {
        return Err(SmotenError::MissingValue(i));
    }
    let labels: Vec<usize> = ds.target().iter().map(|&t| t as usize).collect();
    let n_classes = ds.n_classes();
    let cards = ds.cardinalities();
    let table = VdmTable::build(ds.rows(), &labels, n_classes, &cards, plan.k_exponent);
    let deltas: Vec<Vec<f64>> = (0..cards.len()).map(|f| table.delta_matrix(f)).collect();
    let distance = |a: &[u32], b: &[u32]| -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(f, (&x, &y))| deltas[f][x as usize * cards[f] + y as usize])
            .sum()
    };

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    let majority = by_class.iter().map(Vec::len).max().unwrap_or(0);

    let mut warnings = Vec::new();
    let mut jobs: Vec<(usize, usize, usize)> = Vec::new(); // (class, seed row, k)
    for (c, members) in by_class.iter().enumerate() {
        let m = members.len();
        if m == 0 {
            warnings.push(format!(
                "class `{}` has no rows and cannot be oversampled",
                ds.target_levels()[c]
            ));
            continue;
        }
        if m == majority {
            continue;
        }
        let k = plan.k_neighbors.min(m - 1);
        if m == 1 && plan.k_neighbors > 0 {
            warnings.push(format!(
                "class `{}` has a single row; synthetic rows duplicate it",
                ds.target_levels()[c]
            ));
        } else if k < plan.k_neighbors {
            warnings.push(format!(
                "class `{}` has {m} rows; using {k} neighbours instead of {}",
                ds.target_levels()[c],
                plan.k_neighbors
            ));
        }
        let mut order = members.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(ORDER_STREAM_BASE + c as u64);
        order.shuffle(&mut rng);
        for j in 0..majority - m {
            jobs.push((c, order[j % m], k));
        }
    }

    let synthesized: Vec<(Vec<u32>, SyntheticRow)> = jobs
        .par_iter()
        .enumerate()
        .map(|(job_idx, &(c, seed_row, k))| {
            let neighbors = if k == 0 {
                vec![seed_row]
            } else {
                // Distances are compared on a 1e-9 grid so that sums which
                // are equal in exact arithmetic but differ in the last bit still tie.
                let mut cand: Vec<(i64, usize)> = by_class[c]
                    .iter()
                    .filter(|&&i| i != seed_row)
                    .map(|&i| ((distance(ds.row(seed_row), ds.row(i)) * 1e9).round() as i64, i))
                    .collect();
                cand.sort_unstable();
                cand.truncate(k);
                cand.into_iter().map(|(_, i)| i).collect()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(job_idx as u64);
            let row = (0..cards.len())
                .map(|f| {
                    let mut votes = vec![0usize; cards[f]];
                    for &n in &neighbors {
                        votes[ds.row(n)[f] as usize] += 1;
                    }
                    let best = *votes.iter().max().unwrap();
                    let tied: Vec<u32> = (0..cards[f] as u32).filter(|&v| votes[v as usize] == best).collect();
                    if tied.len() == 1 {
                        tied[0]
                    } else {
                        tied[rng.gen_range(0..tied.len())]
                    }
                })
                .collect();
            (
                row,
                SyntheticRow {
                    class: c,
                    seed_row,
                    neighbors,
                },
            )
        })
        .collect();

    let mut rows = ds.rows().to_vec();
    let mut target = ds.target().to_vec();
    let mut synthetic = Vec::with_capacity(synthesized.len());
    for (row, prov) in synthesized {
        rows.push(row);
        target.push(prov.class as u32);
        synthetic.push(prov);
    }
    Ok(ResampleOutcome {
        dataset: ds.with_rows(rows, target),
        synthetic,
        warnings,
    })
}

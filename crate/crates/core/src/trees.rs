//! Weighted Gini decision trees and random forests over {0,1} feature columns.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("no training rows")]
    EmptyData,
    #[error("total sample weight is zero")]
    ZeroWeight,
    #[error("sample weight {index} is {value}; weights must be finite and non-negative")]
    InvalidWeight { index: usize, value: f64 },
    #[error("label {label} at row {index} is outside 0..{n_classes}")]
    InvalidLabel {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Gini impurity `1 − Σ (w_c/W)²` of a weighted class distribution.
pub fn gini(class_weights: &[f64]) -> Result<f64, TreeError> {
    let total: f64 = class_weights.iter().sum();
    if total <= 0.0 {
        return Err(TreeError::ZeroWeight);
    }
    Ok(1.0 - class_weights.iter().map(|w| (w / total) * (w / total)).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.max_depth == Some(0) {
            return Err(TreeError::InvalidParams("max_depth must be positive".into()));
        }
        if self.min_samples_split < 2 {
            return Err(TreeError::InvalidParams("min_samples_split must be at least 2".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(TreeError::InvalidParams("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        distribution: Vec<f64>,
        n_samples: usize,
    },
    /// Rows with `x[column] < 0.5` go left, the rest go right.
    Split {
        column: usize,
        left: usize,
        right: usize,
        distribution: Vec<f64>,
        n_samples: usize,
    },
}

impl TreeNode {
    pub fn distribution(&self) -> &[f64] {
        match self {
            TreeNode::Leaf { distribution, .. } | TreeNode::Split { distribution, .. } => distribution,
        }
    }
}

/// Fitted tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_classes: usize,
    pub nodes: Vec<TreeNode>,
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = k;
        }
    }
    best
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> &TreeNode {
        let mut node = &self.nodes[0];
        while let TreeNode::Split { column, left, right, .. } = node {
            node = &self.nodes[if x[*column] < 0.5 { *left } else { *right }];
        }
        node
    }

    /// Heaviest class at the reached leaf, ties to the lowest index.
    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax_lowest(self.leaf_for(x).distribution())
    }

    pub fn predict(&self, x: &DenseMatrix) -> Vec<usize> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

fn check_inputs(x: &DenseMatrix, y: &[usize], n_classes: usize, weights: &[f64]) -> Result<(), TreeError> {
    if x.n_rows() == 0 {
        return Err(TreeError::EmptyData);
    }
    if y.len() != x.n_rows() {
        return Err(TreeError::LengthMismatch(x.n_rows(), y.len()));
    }
    if weights.len() != x.n_rows() {
        return Err(TreeError::LengthMismatch(x.n_rows(), weights.len()));
    }
    if let Some((index, &label)) = y.iter().enumerate().find(|(_, &l)| l >= n_classes) {
        return Err(TreeError::InvalidLabel {
            index,
            label,
            n_classes,
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| !(w >= 0.0 && w.is_finite())) {
        return Err(TreeError::InvalidWeight { index, value });
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(TreeError::ZeroWeight);
    }
    Ok(())
}

struct Builder<'a> {
    x: &'a DenseMatrix,
    y: &'a [usize],
    w: &'a [f64],
    n_classes: usize,
    params: TreeParams,
    /// Columns tried per split when subsampling; `None` tries them all.
    max_features: Option<usize>,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<TreeNode>,
}

/// Relative slack for gain comparisons, so that rescaling every weight by a
/// constant cannot flip a split decision through rounding.
const GAIN_EPS: f64 = 1e-10;

impl Builder<'_> {
    fn distribution(&self, rows: &[usize]) -> Vec<f64> {
        let mut d = vec![0.0; self.n_classes];
        for &i in rows {
            d[self.y[i]] += self.w[i];
        }
        d
    }

    fn candidate_columns(&mut self) -> Vec<usize> {
        let p = self.x.n_cols();
        match (self.max_features, self.rng.as_deref_mut()) {
            (Some(k), Some(rng)) if k < p => {
                let mut cols = sample(rng, p, k).into_vec();
                cols.sort_unstable();
                cols
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize], parent: &[f64]) -> Option<usize> {
        let total: f64 = parent.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let parent_score = parent.iter().map(|v| v * v).sum::<f64>() / total;
        let mut best: Option<(usize, f64)> = None;
        for col in self.candidate_columns() {
            let mut left = vec![0.0; self.n_classes];
            let mut n_left = 0usize;
            for &i in rows {
                if self.x.get(i, col) < 0.5 {
                    left[self.y[i]] += self.w[i];
                    n_left += 1;
                }
            }
            let n_right = rows.len() - n_left;
            if n_left < self.params.min_samples_leaf || n_right < self.params.min_samples_leaf {
                continue;
            }
            let w_left: f64 = left.iter().sum();
            let w_right = total - w_left;
            let mut score = 0.0;
            if w_left > 0.0 {
                score += left.iter().map(|v| v * v).sum::<f64>() / w_left;
            }
            if w_right > 0.0 {
                let right_sq: f64 = left.iter().zip(parent).map(|(l, p)| (p - l) * (p - l)).sum();
                score += right_sq / w_right;
            }
            // Weighted Gini decrease per unit of node weight. It is never
            // negative; a zero-gain split is still taken when nothing better
            // exists, otherwise XOR-shaped cells could never be separated.
            let gain = (score - parent_score) / total;
            if best.map_or(true, |(_, g)| gain > g + GAIN_EPS) {
                best = Some((col, gain));
            }
        }
        best.map(|(c, _)| c)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let distribution = self.distribution(&rows);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            distribution: distribution.clone(),
            n_samples: rows.len(),
        });
        let pure = distribution.iter().filter(|&&v| v > 0.0).count() <= 1;
        let depth_left = self.params.max_depth.map_or(true, |d| depth < d);
        if pure || !depth_left || rows.len() < self.params.min_samples_split {
            return id;
        }
        let Some(column) = self.best_split(&rows, &distribution) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x.get(i, column) < 0.5);
        let n_samples = rows.len();
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            column,
            left,
            right,
            distribution,
            n_samples,
        };
        id
    }
}

/// Greedy CART with weighted Gini. Split ties go to the lowest column, and
/// growth stops on depth, row counts, purity, or when no column separates the
/// node's rows.
pub fn tree_fit(
    x: &DenseMatrix,
    y: &[usize],
    n_classes: usize,
    weights: &[f64],
    params: &TreeParams,
) -> Result<DecisionTree, TreeError> {
    check_inputs(x, y, n_classes, weights)?;
    params.validate()?;
    Ok(grow_tree(x, y, n_classes, weights, params, None, None))
}

fn grow_tree(
    x: &DenseMatrix,
    y: &[usize],
    n_classes: usize,
    w: &[f64],
    params: &TreeParams,
    max_features: Option<usize>,
    rng: Option<&mut ChaCha8Rng>,
) -> DecisionTree {
    let mut b = Builder {
        x,
        y,
        w,
        n_classes,
        params: *params,
        max_features,
        rng,
        nodes: Vec::new(),
    };
    b.grow((0..x.n_rows()).collect(), 0);
    DecisionTree {
        n_classes,
        nodes: b.nodes,
    }
}

/// Columns tried per split. `Auto` is kept as its own value so the report
/// can echo the grid, but it resolves exactly like `Sqrt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Log2,
    Auto,
}

impl MaxFeatures {
    pub fn resolve(self, n_cols: usize) -> usize {
        let p = n_cols as f64;
        let k = match self {
            MaxFeatures::All => n_cols,
            MaxFeatures::Sqrt | MaxFeatures::Auto => p.sqrt().floor() as usize,
            MaxFeatures::Log2 => p.log2().floor() as usize,
        };
        k.clamp(1, n_cols.max(1))
    }
}

impl fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaxFeatures::All => "all",
            MaxFeatures::Sqrt => "sqrt",
            MaxFeatures::Log2 => "log2",
            MaxFeatures::Auto => "auto",
        })
    }
}

impl FromStr for MaxFeatures {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" | "none" => Ok(Self::All),
            "sqrt" => Ok(Self::Sqrt),
            "log2" => Ok(Self::Log2),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown max_features `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    pub tree: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_features: MaxFeatures::Sqrt,
            tree: TreeParams::default(),
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub n_classes: usize,
    pub trees: Vec<DecisionTree>,
    /// Per tree, whether each training row was left out of its resample.
    pub out_of_bag: Vec<Vec<bool>>,
    /// Misclassification rate of out-of-bag votes; `None` when no row was
    /// ever out of bag.
    pub oob_error: Option<f64>,
}

fn majority(votes: &[usize]) -> usize {
    let mut best = 0;
    for (k, &v) in votes.iter().enumerate().skip(1) {
        if v > votes[best] {
            best = k;
        }
    }
    best
}

impl RandomForest {
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(x)] += 1;
        }
        majority(&votes)
    }

    pub fn predict(&self, x: &DenseMatrix) -> Vec<usize> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

/// Bagged trees with per-split column subsampling. Tree `t` draws from its
/// own ChaCha8 stream, so the result does not depend on thread scheduling.
pub fn forest_fit(
    x: &DenseMatrix,
    y: &[usize],
    n_classes: usize,
    weights: &[f64],
    params: &ForestParams,
) -> Result<RandomForest, TreeError> {
    check_inputs(x, y, n_classes, weights)?;
    params.tree.validate()?;
    if params.n_estimators == 0 {
        return Err(TreeError::InvalidParams("n_estimators must be at least 1".into()));
    }
    let n = x.n_rows();
    let k = params.max_features.resolve(x.n_cols());
    let fitted: Vec<(DecisionTree, Vec<bool>)> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let draw: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut oob = vec![true; n];
            for &i in &draw {
                oob[i] = false;
            }
            let bx = x.select_rows(&draw);
            let by: Vec<usize> = draw.iter().map(|&i| y[i]).collect();
            let bw: Vec<f64> = draw.iter().map(|&i| weights[i]).collect();
            let tree = if bw.iter().sum::<f64>() > 0.0 {
                grow_tree(&bx, &by, n_classes, &bw, &params.tree, Some(k), Some(&mut rng))
            } else {
                DecisionTree {
                    n_classes,
                    nodes: vec![TreeNode::Leaf {
                        distribution: vec![0.0; n_classes],
                        n_samples: n,
                    }],
                }
            };
            (tree, oob)
        })
        .collect();
    let (trees, out_of_bag): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

    let mut scored = 0usize;
    let mut wrong = 0usize;
    for i in 0..n {
        let mut votes = vec![0usize; n_classes];
        let mut any = false;
        for (t, oob) in trees.iter().zip(&out_of_bag) {
            if oob[i] {
                votes[t.predict_row(x.row(i))] += 1;
                any = true;
            }
        }
        if any {
            scored += 1;
            if majority(&votes) != y[i] {
                wrong += 1;
            }
        }
    }
    Ok(RandomForest {
        n_classes,
        trees,
        out_of_bag,
        oob_error: (scored > 0).then(|| wrong as f64 / scored as f64),
    })
}

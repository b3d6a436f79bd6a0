//! Uniform fitting interface over the four learners, parameter grids and
//! exhaustive grid search scored on held-out accuracy.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;
use crate::mlp::{mlp_fit, Activation, Loss, MlpError, MlpParams, Optimizer, TrainedMlp};
use crate::svm::{multiclass_train, Gamma, KernelKind, KernelSpec, MulticlassSvm, SmoOptions, SvmError};
use crate::trees::{forest_fit, tree_fit, DecisionTree, ForestParams, MaxFeatures, RandomForest, TreeError, TreeParams};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("the parameter grid is empty")]
    EmptyGrid,
    #[error("no grid cell produced a usable model ({failed} failed, {unconverged} did not converge, {diverged} diverged)")]
    NoUsableCell {
        failed: usize,
        unconverged: usize,
        diverged: usize,
    },
}

impl ModelError {
    pub fn is_divergence(&self) -> bool {
        matches!(self, ModelError::Mlp(MlpError::DivergedLoss { .. }))
    }

    /// True when training ran but did not reach a usable optimum.
    pub fn is_non_convergence(&self) -> bool {
        match self {
            ModelError::NoUsableCell {
                unconverged, diverged, ..
            } => unconverged + diverged > 0,
            other => other.is_divergence(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Svm,
    Dt,
    Rf,
    Mlp,
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Svm => "svm",
            Self::Dt => "dt",
            Self::Rf => "rf",
            Self::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svm" => Ok(Self::Svm),
            "dt" => Ok(Self::Dt),
            "rf" => Ok(Self::Rf),
            "mlp" => Ok(Self::Mlp),
            other => Err(format!("unknown model family `{other}`")),
        }
    }
}

/// Hyperparameters of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelParams {
    Svm { kernel: KernelSpec, c: f64 },
    Dt(TreeParams),
    Rf(ForestParams),
    Mlp(MlpParams),
}

impl ModelParams {
    pub fn family(&self) -> ModelFamily {
        match self {
            Self::Svm { .. } => ModelFamily::Svm,
            Self::Dt(_) => ModelFamily::Dt,
            Self::Rf(_) => ModelFamily::Rf,
            Self::Mlp(_) => ModelFamily::Mlp,
        }
    }

    /// Compact `key=value` description used in CSV output.
    pub fn describe(&self) -> String {
        let depth = |d: Option<usize>| d.map_or("none".to_string(), |v| v.to_string());
        match self {
            Self::Svm { kernel, c } => format!(
                "kernel={} c={} gamma={} degree={} coef={}",
                kernel.kind, c, kernel.gamma, kernel.degree, kernel.coef
            ),
            Self::Dt(p) => format!(
                "max_depth={} min_samples_split={} min_samples_leaf={}",
                depth(p.max_depth),
                p.min_samples_split,
                p.min_samples_leaf
            ),
            Self::Rf(p) => format!(
                "n_estimators={} max_features={} max_depth={} min_samples_split={} min_samples_leaf={}",
                p.n_estimators,
                p.max_features,
                depth(p.tree.max_depth),
                p.tree.min_samples_split,
                p.tree.min_samples_leaf
            ),
            Self::Mlp(p) => format!(
                "units1={} units2={} activation={} optimizer={} loss={}",
                p.units1, p.units2, p.activation, p.optimizer, p.loss
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TrainedModel {
    Svm(MulticlassSvm),
    Dt(DecisionTree),
    Rf(RandomForest),
    Mlp(TrainedMlp),
}

impl TrainedModel {
    pub fn predict(&self, x: &DenseMatrix) -> Vec<usize> {
        match self {
            Self::Svm(m) => m.predict(x),
            Self::Dt(m) => m.predict(x),
            Self::Rf(m) => m.predict(x),
            Self::Mlp(m) => m.model.predict(x),
        }
    }

    /// False only for an SVM whose solver hit its iteration cap.
    pub fn converged(&self) -> bool {
        match self {
            Self::Svm(m) => m.converged(),
            _ => true,
        }
    }
}

/// Fits one model with per-sample weights.
pub fn fit(
    params: &ModelParams,
    x: &DenseMatrix,
    y: &[usize],
    n_classes: usize,
    weights: &[f64],
    smo: &SmoOptions,
) -> Result<TrainedModel, ModelError> {
    Ok(match params {
        ModelParams::Svm { kernel, c } => {
            TrainedModel::Svm(multiclass_train(x, y, n_classes, *c, weights, kernel, smo)?)
        }
        ModelParams::Dt(p) => TrainedModel::Dt(tree_fit(x, y, n_classes, weights, p)?),
        ModelParams::Rf(p) => TrainedModel::Rf(forest_fit(x, y, n_classes, weights, p)?),
        ModelParams::Mlp(p) => TrainedModel::Mlp(mlp_fit(x, y, n_classes, weights, p)?),
    })
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> f64 {
    if y_true.is_empty() {
        return 0.0;
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    hits as f64 / y_true.len() as f64
}

fn depth_list<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Option<usize>>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Depth {
        Limit(usize),
        Name(String),
    }
    Vec::<Depth>::deserialize(d)?
        .into_iter()
        .map(|v| match v {
            Depth::Limit(0) => Ok(None),
            Depth::Limit(n) => Ok(Some(n)),
            Depth::Name(s) if s.eq_ignore_ascii_case("none") => Ok(None),
            Depth::Name(s) => Err(serde::de::Error::custom(format!("max_depth must be an integer or \"none\", got `{s}`"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmGrid {
    pub kernels: Vec<KernelKind>,
    pub c: Vec<f64>,
    pub gamma: Vec<Gamma>,
    pub degree: Vec<u32>,
    pub coef: Vec<f64>,
}

impl Default for SvmGrid {
    fn default() -> Self {
        Self {
            kernels: KernelKind::ALL.to_vec(),
            c: vec![0.1, 1.0, 10.0, 100.0],
            gamma: vec![Gamma::Scale],
            degree: vec![3],
            coef: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtGrid {
    #[serde(deserialize_with = "depth_list")]
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
}

impl Default for DtGrid {
    fn default() -> Self {
        Self {
            max_depth: vec![None, Some(2), Some(4), Some(6), Some(8), Some(10)],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfGrid {
    pub n_estimators: Vec<usize>,
    pub max_features: Vec<MaxFeatures>,
    #[serde(deserialize_with = "depth_list")]
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub bootstrap: bool,
}

impl Default for RfGrid {
    fn default() -> Self {
        Self {
            n_estimators: vec![10, 50, 100, 200],
            max_features: vec![MaxFeatures::Auto, MaxFeatures::Sqrt, MaxFeatures::Log2],
            max_depth: vec![None, Some(5), Some(10), Some(20)],
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 4],
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpGrid {
    pub units1: Vec<usize>,
    pub units2: Vec<usize>,
    pub activation: Vec<Activation>,
    pub optimizer: Vec<Optimizer>,
    pub loss: Vec<Loss>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
}

impl Default for MlpGrid {
    fn default() -> Self {
        Self {
            units1: vec![8, 10, 20, 30],
            units2: vec![8, 10, 20, 30],
            activation: Activation::ALL.to_vec(),
            optimizer: vec![Optimizer::Adam, Optimizer::Sgd],
            loss: vec![Loss::CategoricalCrossentropy, Loss::MeanSquaredError],
            epochs: 20,
            batch_size: 32,
            learning_rate: None,
        }
    }
}

/// The grid for one family. Cells are enumerated with the last-listed
/// parameter varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Grid {
    Svm(SvmGrid),
    Dt(DtGrid),
    Rf(RfGrid),
    Mlp(MlpGrid),
}

impl Grid {
    pub fn default_for(family: ModelFamily) -> Self {
        match family {
            ModelFamily::Svm => Grid::Svm(SvmGrid::default()),
            ModelFamily::Dt => Grid::Dt(DtGrid::default()),
            ModelFamily::Rf => Grid::Rf(RfGrid::default()),
            ModelFamily::Mlp => Grid::Mlp(MlpGrid::default()),
        }
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            Grid::Svm(_) => ModelFamily::Svm,
            Grid::Dt(_) => ModelFamily::Dt,
            Grid::Rf(_) => ModelFamily::Rf,
            Grid::Mlp(_) => ModelFamily::Mlp,
        }
    }

    /// Every cell in declared order. `seed` feeds the stochastic learners.
    pub fn cells(&self, seed: u64) -> Vec<ModelParams> {
        let mut out = Vec::new();
        match self {
            Grid::Svm(g) => {
                for &kind in &g.kernels {
                    for &c in &g.c {
                        for &gamma in &g.gamma {
                            for &degree in &g.degree {
                                for &coef in &g.coef {
                                    out.push(ModelParams::Svm {
                                        kernel: KernelSpec {
                                            kind,
                                            degree,
                                            coef,
                                            gamma,
                                        },
                                        c,
                                    });
                                }
                            }
                        }
                    }
                }
            }
            Grid::Dt(g) => {
                for &max_depth in &g.max_depth {
                    for &min_samples_split in &g.min_samples_split {
                        for &min_samples_leaf in &g.min_samples_leaf {
                            out.push(ModelParams::Dt(TreeParams {
                                max_depth,
                                min_samples_split,
                                min_samples_leaf,
                            }));
                        }
                    }
                }
            }
            Grid::Rf(g) => {
                for &n_estimators in &g.n_estimators {
                    for &max_features in &g.max_features {
                        for &max_depth in &g.max_depth {
                            for &min_samples_split in &g.min_samples_split {
                                for &min_samples_leaf in &g.min_samples_leaf {
                                    out.push(ModelParams::Rf(ForestParams {
                                        n_estimators,
                                        max_features,
                                        tree: TreeParams {
                                            max_depth,
                                            min_samples_split,
                                            min_samples_leaf,
                                        },
                                        bootstrap: g.bootstrap,
                                        seed,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
            Grid::Mlp(g) => {
                for &units1 in &g.units1 {
                    for &units2 in &g.units2 {
                        for &activation in &g.activation {
                            for &optimizer in &g.optimizer {
                                for &loss in &g.loss {
                                    out.push(ModelParams::Mlp(MlpParams {
                                        units1,
                                        units2,
                                        activation,
                                        optimizer,
                                        loss,
                                        epochs: g.epochs,
                                        learning_rate: g.learning_rate,
                                        batch_size: g.batch_size,
                                        seed,
                                    }));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    NotConverged,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScore {
    pub index: usize,
    pub params: ModelParams,
    /// Held-out accuracy; `None` when fitting failed.
    pub accuracy: Option<f64>,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOutcome {
    pub family: ModelFamily,
    pub cells: Vec<CellScore>,
    pub best: usize,
}

impl GridOutcome {
    pub fn best_cell(&self) -> &CellScore {
        &self.cells[self.best]
    }
}

/// Data for one train/evaluate round.
pub struct SplitData<'a> {
    pub x_train: &'a DenseMatrix,
    pub y_train: &'a [usize],
    pub weights: &'a [f64],
    pub x_test: &'a DenseMatrix,
    pub y_test: &'a [usize],
    pub n_classes: usize,
}

/// Fits every cell (concurrently) and keeps the best held-out accuracy,
/// ties to the earliest cell. Converged cells win over unconverged ones.
pub fn grid_search(cells: Vec<ModelParams>, data: &SplitData<'_>, smo: &SmoOptions) -> Result<GridOutcome, ModelError> {
    let family = cells.first().ok_or(ModelError::EmptyGrid)?.family();
    let scored: Vec<CellScore> = cells
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            match fit(&params, data.x_train, data.y_train, data.n_classes, data.weights, smo) {
                Ok(model) => {
                    let acc = accuracy(data.y_test, &model.predict(data.x_test));
                    CellScore {
                        index,
                        params,
                        accuracy: Some(acc),
                        status: if model.converged() {
                            CellStatus::Ok
                        } else {
                            CellStatus::NotConverged
                        },
                        error: None,
                    }
                }
                Err(e) => CellScore {
                    index,
                    params,
                    accuracy: None,
                    status: if e.is_divergence() {
                        CellStatus::Diverged
                    } else {
                        CellStatus::Failed
                    },
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, c) in scored.iter().enumerate() {
        if c.status != CellStatus::Ok {
            continue;
        }
        if best.map_or(true, |b| c.accuracy > scored[b].accuracy) {
            best = Some(i);
        }
    }
    let count = |s: CellStatus| scored.iter().filter(|c| c.status == s).count();
    let best = best.ok_or_else(|| ModelError::NoUsableCell {
        failed: count(CellStatus::Failed),
        unconverged: count(CellStatus::NotConverged),
        diverged: count(CellStatus::Diverged),
    })?;
    Ok(GridOutcome {
        family,
        cells: scored,
        best,
    })
}

//! Soft-margin kernel SVM trained by sequential minimal optimization.
//!
//! The dual problem solved for labels `y ∈ {−1, +1}` is
//!
//! ```text
//! max  Σ αᵢ − ½ Σᵢⱼ αᵢ αⱼ yᵢ yⱼ K(xᵢ, xⱼ)
//! s.t. 0 ≤ αᵢ ≤ C·wᵢ,  Σ αᵢ yᵢ = 0
//! ```
//!
//! where `wᵢ` is a per-sample weight. Each iteration picks the maximal
//! violating pair (first-order working-set selection, ties to the lowest
//! index) and solves the two-variable subproblem in closed form.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::matrix::{dot, squared_distance, DenseMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum SvmError {
    #[error("training data holds a single class")]
    SingleClass,
    #[error("gamma=scale is undefined: the design matrix has zero variance")]
    ZeroVariance,
    #[error("design matrix has no columns")]
    EmptyMatrix,
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("polynomial degree must be at least 1")]
    InvalidDegree,
    #[error("C must be positive and finite, got {0}")]
    InvalidC(f64),
    #[error("sample weight {index} is {value}; weights must be positive")]
    InvalidWeight { index: usize, value: f64 },
    #[error("label {index} is {value}; labels must be -1 or +1")]
    InvalidLabel { index: usize, value: f64 },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    #[serde(alias = "polynomial")]
    Poly,
    Rbf,
    Sigmoid,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [Self::Linear, Self::Poly, Self::Rbf, Self::Sigmoid];
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Poly => "poly",
            Self::Rbf => "rbf",
            Self::Sigmoid => "sigmoid",
        })
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(Self::Linear),
            "poly" | "polynomial" => Ok(Self::Poly),
            "rbf" => Ok(Self::Rbf),
            "sigmoid" => Ok(Self::Sigmoid),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

/// Kernel width: `auto` = 1/n_features, `scale` = 1/(n_features·Var(X)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Scale,
    Auto,
    Value(f64),
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Scale => f.write_str("scale"),
            Self::Auto => f.write_str("auto"),
            Self::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Gamma {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scale" => Ok(Self::Scale),
            "auto" => Ok(Self::Auto),
            v => v
                .parse::<f64>()
                .map(Self::Value)
                .map_err(|_| format!("gamma must be `scale`, `auto` or a number, got `{v}`")),
        }
    }
}

impl Serialize for Gamma {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Value(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Gamma::Value(v)),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Unresolved kernel choice. `coef` is the additive offset inside the
/// polynomial and sigmoid kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default)]
    pub coef: f64,
    #[serde(default = "default_gamma")]
    pub gamma: Gamma,
}

fn default_degree() -> u32 {
    3
}

fn default_gamma() -> Gamma {
    Gamma::Scale
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        Self {
            kind,
            degree: default_degree(),
            coef: 0.0,
            gamma: default_gamma(),
        }
    }
}

/// Kernel with gamma fixed to a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub degree: u32,
    pub coef: f64,
    pub gamma: f64,
}

impl Kernel {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            degree: 1,
            coef: 0.0,
            gamma: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(x, y),
            KernelKind::Poly => (dot(x, y) + self.coef).powi(self.degree as i32),
            KernelKind::Rbf => (-self.gamma * squared_distance(x, y)).exp(),
            KernelKind::Sigmoid => (self.gamma * dot(x, y) + self.coef).tanh(),
        }
    }
}

/// Resolves `scale`/`auto` against the training matrix.
pub fn gamma_resolve(spec: &KernelSpec, data: &DenseMatrix) -> Result<f64, SvmError> {
    if data.n_cols() == 0 {
        return Err(SvmError::EmptyMatrix);
    }
    let n_features = data.n_cols() as f64;
    match spec.gamma {
        Gamma::Auto => Ok(1.0 / n_features),
        Gamma::Scale => {
            let xs = data.as_slice();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            if var == 0.0 || !var.is_finite() {
                return Err(SvmError::ZeroVariance);
            }
            Ok(1.0 / (n_features * var))
        }
        Gamma::Value(g) if g > 0.0 && g.is_finite() => Ok(g),
        Gamma::Value(g) => Err(SvmError::InvalidGamma(g)),
    }
}

/// Resolves a spec into a concrete kernel.
pub fn resolve_kernel(spec: &KernelSpec, data: &DenseMatrix) -> Result<Kernel, SvmError> {
    if spec.degree < 1 {
        return Err(SvmError::InvalidDegree);
    }
    Ok(Kernel {
        kind: spec.kind,
        degree: spec.degree,
        coef: spec.coef,
        gamma: gamma_resolve(spec, data)?,
    })
}

/// Length-checked kernel evaluation.
pub fn kernel_eval(kernel: &Kernel, x: &[f64], y: &[f64]) -> Result<f64, SvmError> {
    if x.len() != y.len() {
        return Err(SvmError::LengthMismatch(x.len(), y.len()));
    }
    Ok(kernel.eval(x, y))
}

/// Full Gram matrix of `x` under `kernel`.
pub fn gram_matrix(kernel: &Kernel, x: &DenseMatrix) -> DenseMatrix {
    let n = x.n_rows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| kernel.eval(x.row(i), x.row(j))).collect())
        .collect();
    DenseMatrix::from_rows(&rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoOptions {
    /// Stop once the maximal KKT violation drops below this.
    pub tol: f64,
    /// Iteration cap; `None` means `max(10·n, 100_000)`.
    pub max_iter: Option<usize>,
    /// Largest n for which the whole Gram matrix is cached.
    pub full_cache_limit: usize,
    /// Rows kept by the LRU cache above that limit.
    pub lru_rows: usize,
}

impl Default for SmoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: None,
            full_cache_limit: 4096,
            lru_rows: 1024,
        }
    }
}

/// Rows of Q, Qᵢⱼ = yᵢ yⱼ K(xᵢ, xⱼ).
enum QCache<'a> {
    Full(Vec<Rc<[f64]>>),
    Lru {
        x: &'a DenseMatrix,
        y: &'a [f64],
        kernel: Kernel,
        cap: usize,
        rows: HashMap<usize, Rc<[f64]>>,
        order: VecDeque<usize>,
    },
}

fn q_row(x: &DenseMatrix, y: &[f64], kernel: &Kernel, i: usize) -> Rc<[f64]> {
    (0..x.n_rows())
        .map(|j| y[i] * y[j] * kernel.eval(x.row(i), x.row(j)))
        .collect()
}

impl<'a> QCache<'a> {
    fn new(x: &'a DenseMatrix, y: &'a [f64], kernel: Kernel, opts: &SmoOptions) -> Self {
        if x.n_rows() <= opts.full_cache_limit {
            QCache::Full((0..x.n_rows()).map(|i| q_row(x, y, &kernel, i)).collect())
        } else {
            QCache::Lru {
                x,
                y,
                kernel,
                cap: opts.lru_rows.max(2),
                rows: HashMap::new(),
                order: VecDeque::new(),
            }
        }
    }

    fn row(&mut self, i: usize) -> Rc<[f64]> {
        match self {
            QCache::Full(rows) => rows[i].clone(),
            QCache::Lru {
                x,
                y,
                kernel,
                cap,
                rows,
                order,
            } => {
                if let Some(r) = rows.get(&i) {
                    let r = r.clone();
                    if let Some(pos) = order.iter().position(|&k| k == i) {
                        order.remove(pos);
                    }
                    order.push_back(i);
                    return r;
                }
                if rows.len() >= *cap {
                    if let Some(old) = order.pop_front() {
                        rows.remove(&old);
                    }
                }
                let r = q_row(x, y, kernel, i);
                rows.insert(i, r.clone());
                order.push_back(i);
                r
            }
        }
    }
}

/// A trained binary SVM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub support_vectors: DenseMatrix,
    /// αᵢ·yᵢ for each support vector.
    pub dual_coef: Vec<f64>,
    pub support_indices: Vec<usize>,
    pub bias: f64,
    /// Every training multiplier, support vector or not.
    pub alpha: Vec<f64>,
    /// Per-sample box bound C·wᵢ.
    pub upper_bounds: Vec<f64>,
    /// Dual objective Σα − ½αᵀQα at the returned iterate.
    pub objective: f64,
    /// Maximal KKT violation at the returned iterate.
    pub kkt_violation: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before `tol` was reached.
    pub converged: bool,
}

impl SvmModel {
    pub fn decision_function(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .rows()
            .zip(&self.dual_coef)
            .map(|(sv, &coef)| coef * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// `+1.0` when the decision value is positive, else `-1.0`.
    pub fn predict_sign(&self, x: &[f64]) -> f64 {
        if self.decision_function(x) > 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

const TAU: f64 = 1e-12;

/// Trains a binary soft-margin SVM.
///
/// `y` must be ±1 and every weight positive. Deterministic: the working
/// set is the maximal violating pair with ties to the lowest index.
pub fn smo_train(
    x: &DenseMatrix,
    y: &[f64],
    c: f64,
    weights: &[f64],
    kernel: &Kernel,
    opts: &SmoOptions,
) -> Result<SvmModel, SvmError> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(SvmError::LengthMismatch(n, y.len()));
    }
    if weights.len() != n {
        return Err(SvmError::LengthMismatch(n, weights.len()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(SvmError::InvalidC(c));
    }
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
        return Err(SvmError::InvalidLabel { index, value });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, &w)| !(w > 0.0 && w.is_finite())) {
        return Err(SvmError::InvalidWeight { index, value });
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(SvmError::SingleClass);
    }

    let upper: Vec<f64> = weights.iter().map(|w| c * w).collect();
    let diag: Vec<f64> = (0..n).map(|i| kernel.eval(x.row(i), x.row(i))).collect();
    let mut cache = QCache::new(x, y, *kernel, opts);
    let max_iter = opts.max_iter.unwrap_or((10 * n).max(100_000));

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let in_up = |a: &[f64], t: usize| (y[t] > 0.0 && a[t] < upper[t]) || (y[t] < 0.0 && a[t] > 0.0);
    let in_low = |a: &[f64], t: usize| (y[t] > 0.0 && a[t] > 0.0) || (y[t] < 0.0 && a[t] < upper[t]);

    let mut iterations = 0;
    let mut converged = false;
    let mut violation;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(&alpha, t) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(&alpha, t) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        violation = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || violation < opts.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let q_i = cache.row(i);
        let q_j = cache.row(j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (ci, cj) = (upper[i], upper[j]);
        if y[i] != y[j] {
            let quad = (diag[i] + diag[j] + 2.0 * q_i[j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let quad = (diag[i] + diag[j] - 2.0 * q_i[j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q_i[t] * di + q_j[t] * dj;
        }
    }

    // bias from free multipliers, midpoint of the feasible interval otherwise
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (1.0 - g)).sum::<f64>();

    let support_indices: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    Ok(SvmModel {
        kernel: *kernel,
        c,
        support_vectors: x.select_rows(&support_indices),
        dual_coef: support_indices.iter().map(|&t| alpha[t] * y[t]).collect(),
        support_indices,
        bias: -rho,
        alpha,
        upper_bounds: upper,
        objective,
        kkt_violation: violation.max(0.0),
        iterations,
        converged,
    })
}

/// Binary model for one class pair; `positive` is the +1 side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModel {
    pub negative: usize,
    pub positive: usize,
    pub model: SvmModel,
}

/// One-vs-one ensemble over the classes present in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassSvm {
    pub n_classes: usize,
    pub classes: Vec<usize>,
    pub pairs: Vec<PairModel>,
}

impl MulticlassSvm {
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let mut votes = vec![0usize; self.n_classes];
        let mut score = vec![0.0f64; self.n_classes];
        for p in &self.pairs {
            let f = p.model.decision_function(x);
            if f > 0.0 {
                votes[p.positive] += 1;
            } else {
                votes[p.negative] += 1;
            }
            score[p.positive] += f;
            score[p.negative] -= f;
        }
        let mut best = self.classes[0];
        for &k in &self.classes[1..] {
            if votes[k] > votes[best] || (votes[k] == votes[best] && score[k] > score[best]) {
                best = k;
            }
        }
        best
    }

    pub fn predict(&self, x: &DenseMatrix) -> Vec<usize> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn converged(&self) -> bool {
        self.pairs.iter().all(|p| p.model.converged)
    }
}

/// One-vs-one training. Gamma is resolved once on the full training matrix;
/// each class pair is an independent SMO solve.
pub fn multiclass_train(
    x: &DenseMatrix,
    y: &[usize],
    n_classes: usize,
    c: f64,
    weights: &[f64],
    spec: &KernelSpec,
    opts: &SmoOptions,
) -> Result<MulticlassSvm, SvmError> {
    if y.len() != x.n_rows() {
        return Err(SvmError::LengthMismatch(x.n_rows(), y.len()));
    }
    if weights.len() != x.n_rows() {
        return Err(SvmError::LengthMismatch(x.n_rows(), weights.len()));
    }
    let kernel = resolve_kernel(spec, x)?;
    let classes: Vec<usize> = (0..n_classes).filter(|k| y.contains(k)).collect();
    if classes.len() < 2 {
        return Err(SvmError::SingleClass);
    }
    let mut pair_ids = Vec::new();
    for (a_pos, &a) in classes.iter().enumerate() {
        for &b in &classes[a_pos + 1..] {
            pair_ids.push((a, b));
        }
    }
    let pairs = pair_ids
        .par_iter()
        .map(|&(a, b)| {
            let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == a || y[i] == b).collect();
            let sub_x = x.select_rows(&idx);
            let sub_y: Vec<f64> = idx.iter().map(|&i| if y[i] == b { 1.0 } else { -1.0 }).collect();
            let sub_w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            smo_train(&sub_x, &sub_y, c, &sub_w, &kernel, opts).map(|model| PairModel {
                negative: a,
                positive: b,
                model,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MulticlassSvm {
        n_classes,
        classes,
        pairs,
    })
}

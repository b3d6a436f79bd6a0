//! Two-hidden-layer perceptron with a softmax output, trained by mini-batch
//! backpropagation.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::DenseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("loss became {loss} at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("label {label} at row {index} is outside 0..{n_classes}")]
    InvalidLabel {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Self::Relu, Self::Tanh, Self::Sigmoid];
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
        })
    }
}

pub fn activate(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Derivative expressed through the pre-activation `h` and output `a`.
fn activate_grad(kind: Activation, h: f64, a: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if h > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a * a,
        Activation::Sigmoid => a * (1.0 - a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Optimizer::Adam => 1e-3,
            Optimizer::Sgd => 1e-2,
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CategoricalCrossentropy,
    MeanSquaredError,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CategoricalCrossentropy => "categorical_crossentropy",
            Self::MeanSquaredError => "mean_squared_error",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub units1: usize,
    pub units2: usize,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub epochs: usize,
    /// `None` picks the optimizer's default (adam 1e-3, sgd 1e-2).
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            units1: 10,
            units2: 10,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            loss: Loss::CategoricalCrossentropy,
            epochs: 20,
            learning_rate: None,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl MlpParams {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.units1 == 0 || self.units2 == 0 {
            return Err(MlpError::InvalidParams("layer widths must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(MlpError::InvalidParams("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(MlpError::InvalidParams("batch_size must be at least 1".into()));
        }
        let lr = self.learning_rate();
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(MlpError::InvalidParams(format!("learning rate must be non-negative, got {lr}")));
        }
        Ok(())
    }
}

/// Dense layer `out = W·in + b`, with `W` stored as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(n_out: usize, n_in: usize) -> Self {
        Self {
            weights: DenseMatrix::zeros(n_out, n_in),
            bias: vec![0.0; n_out],
        }
    }

    fn glorot(n_out: usize, n_in: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let data = (0..n_out * n_in).map(|_| rng.gen_range(-limit..=limit)).collect();
        Self {
            weights: DenseMatrix::from_vec(n_out, n_in, data),
            bias: vec![0.0; n_out],
        }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .rows()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }
}

/// Layer-shaped parameters or gradients: input→units1→units2→classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

struct Trace {
    h: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    p: Vec<f64>,
}

impl MlpModel {
    pub fn new(n_inputs: usize, n_classes: usize, params: &MlpParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        Self::init(n_inputs, n_classes, params, &mut rng)
    }

    fn init(n_inputs: usize, n_classes: usize, params: &MlpParams, rng: &mut ChaCha8Rng) -> Self {
        Self {
            activation: params.activation,
            layers: vec![
                Layer::glorot(params.units1, n_inputs, rng),
                Layer::glorot(params.units2, params.units1, rng),
                Layer::glorot(n_classes, params.units2, rng),
            ],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.weights.n_rows(), l.weights.n_cols()))
                .collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layers[2].bias.len()
    }

    fn forward(&self, x: &[f64]) -> Trace {
        let mut h = Vec::with_capacity(2);
        let mut a = Vec::with_capacity(2);
        let mut input = x.to_vec();
        for layer in &self.layers[..2] {
            let pre = layer.apply(&input);
            let out: Vec<f64> = pre.iter().map(|&v| activate(self.activation, v)).collect();
            h.push(pre);
            a.push(out.clone());
            input = out;
        }
        let p = softmax(&self.layers[2].apply(&input));
        Trace { h, a, p }
    }

    pub fn predict_proba_row(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).p
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        let p = self.predict_proba_row(x);
        let mut best = 0;
        for k in 1..p.len() {
            if p[k] > p[best] {
                best = k;
            }
        }
        best
    }

    pub fn predict(&self, x: &DenseMatrix) -> Vec<usize> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }

    /// All parameters in a fixed order (weights then bias, layer by layer).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`MlpModel::flatten`]. Panics on a length mismatch.
    pub fn set_flat(&mut self, values: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            let (r, c) = (l.weights.n_rows(), l.weights.n_cols());
            l.weights = DenseMatrix::from_vec(r, c, values[pos..pos + r * c].to_vec());
            pos += r * c;
            l.bias.copy_from_slice(&values[pos..pos + r]);
            pos += r;
        }
        assert_eq!(pos, values.len(), "parameter vector length mismatch");
    }
}

fn sample_loss(loss: Loss, p: &[f64], target: usize) -> f64 {
    match loss {
        // The clamp guards against ln(0); NaN must still come through.
        Loss::CategoricalCrossentropy if p[target].is_nan() => f64::NAN,
        Loss::CategoricalCrossentropy => -p[target].max(f64::MIN_POSITIVE).ln(),
        Loss::MeanSquaredError => {
            p.iter()
                .enumerate()
                .map(|(k, &pk)| {
                    let d = pk - if k == target { 1.0 } else { 0.0 };
                    d * d
                })
                .sum::<f64>()
                / p.len() as f64
        }
    }
}

/// d loss / d logits for one sample.
fn output_delta(loss: Loss, p: &[f64], target: usize) -> Vec<f64> {
    let onehot = |k: usize| if k == target { 1.0 } else { 0.0 };
    match loss {
        Loss::CategoricalCrossentropy => p.iter().enumerate().map(|(k, &pk)| pk - onehot(k)).collect(),
        Loss::MeanSquaredError => {
            let n = p.len() as f64;
            let g: Vec<f64> = p.iter().enumerate().map(|(k, &pk)| 2.0 * (pk - onehot(k)) / n).collect();
            let gp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
            p.iter().zip(&g).map(|(pj, gj)| pj * (gj - gp)).collect()
        }
    }
}

/// Weighted batch loss `Σ wₙ ℓₙ / batch_size`.
pub fn batch_loss(model: &MlpModel, x: &DenseMatrix, targets: &[usize], weights: &[f64], loss: Loss) -> f64 {
    let b = x.n_rows() as f64;
    x.rows()
        .zip(targets)
        .zip(weights)
        .map(|((r, &t), &w)| w * sample_loss(loss, &model.forward(r).p, t))
        .sum::<f64>()
        / b
}

/// Analytic gradient of [`batch_loss`], returned in the model's own shape
/// together with the loss value.
pub fn gradient(model: &MlpModel, x: &DenseMatrix, targets: &[usize], weights: &[f64], loss: Loss) -> (f64, MlpModel) {
    let mut g = model.zeros_like();
    let b = x.n_rows() as f64;
    let mut total = 0.0;
    for ((row, &t), &w) in x.rows().zip(targets).zip(weights) {
        let tr = model.forward(row);
        total += w * sample_loss(loss, &tr.p, t);
        let scale = w / b;
        if scale == 0.0 {
            continue;
        }
        let mut delta = output_delta(loss, &tr.p, t);
        for li in (0..3).rev() {
            let input: &[f64] = if li == 0 { row } else { &tr.a[li - 1] };
            let gl = &mut g.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                let sd = scale * d;
                gl.bias[o] += sd;
                for (gw, &xi) in gl.weights.row_mut(o).iter_mut().zip(input) {
                    *gw += sd * xi;
                }
            }
            if li > 0 {
                let layer = &model.layers[li];
                let mut back = vec![0.0; input.len()];
                for (o, &d) in delta.iter().enumerate() {
                    for (bk, &wk) in back.iter_mut().zip(layer.weights.row(o)) {
                        *bk += d * wk;
                    }
                }
                let (h, a) = (&tr.h[li - 1], &tr.a[li - 1]);
                delta = back
                    .iter()
                    .enumerate()
                    .map(|(k, &v)| v * activate_grad(model.activation, h[k], a[k]))
                    .collect();
            }
        }
    }
    (total / b, g)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch training with a seeded shuffle each epoch.
pub fn mlp_fit(
    x: &DenseMatrix,
    y: &[usize],
    n_classes: usize,
    weights: &[f64],
    params: &MlpParams,
) -> Result<TrainedMlp, MlpError> {
    params.validate()?;
    if n_classes < 2 {
        return Err(MlpError::TooFewClasses(n_classes));
    }
    if y.len() != x.n_rows() {
        return Err(MlpError::LengthMismatch(x.n_rows(), y.len()));
    }
    if weights.len() != x.n_rows() {
        return Err(MlpError::LengthMismatch(x.n_rows(), weights.len()));
    }
    if let Some((index, &label)) = y.iter().enumerate().find(|(_, &l)| l >= n_classes) {
        return Err(MlpError::InvalidLabel {
            index,
            label,
            n_classes,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = MlpModel::init(x.n_cols(), n_classes, params, &mut rng);
    let lr = params.learning_rate();
    let n_params = model.flatten().len();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    let mut history = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, chunk) in order.chunks(params.batch_size).enumerate() {
            let bx = x.select_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let bw: Vec<f64> = chunk.iter().map(|&i| weights[i]).collect();
            let (loss, g) = gradient(&model, &bx, &by, &bw, params.loss);
            if !loss.is_finite() {
                return Err(MlpError::DivergedLoss { epoch, batch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            let g = g.flatten();
            let mut theta = model.flatten();
            match params.optimizer {
                Optimizer::Sgd => {
                    for (p, gi) in theta.iter_mut().zip(&g) {
                        *p -= lr * gi;
                    }
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let c1 = 1.0 - BETA1.powi(adam.t);
                    let c2 = 1.0 - BETA2.powi(adam.t);
                    for k in 0..n_params {
                        adam.m[k] = BETA1 * adam.m[k] + (1.0 - BETA1) * g[k];
                        adam.v[k] = BETA2 * adam.v[k] + (1.0 - BETA2) * g[k] * g[k];
                        let m_hat = adam.m[k] / c1;
                        let v_hat = adam.v[k] / c2;
                        theta[k] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
            if let Some(bad) = theta.iter().find(|v| !v.is_finite()) {
                return Err(MlpError::DivergedLoss { epoch, batch, loss: *bad });
            }
            model.set_flat(&theta);
        }
        history.push(epoch_loss / x.n_rows().max(1) as f64);
    }
    Ok(TrainedMlp {
        model,
        loss_history: history,
    })
}

/// A fitted network with its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedMlp {
    pub model: MlpModel,
    pub loss_history: Vec<f64>,
}

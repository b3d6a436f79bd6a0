//! Independent oracles shared by the integration suites.
//!
//! Nothing here calls into the library's own metric or solver code; the
//! point is to recompute the same quantities a second, simpler way.

#![allow(dead_code)]

pub mod compare;
pub mod reference;

use fairkit::fairness::{FairnessError, MetricResult, Rational, Verdict};
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn q(n: i128, d: i128) -> Rational {
    Rational::new(n, d)
}

// ---------------------------------------------------------------------------
// Fairness counting oracle

/// A computed metric value, or the reason there is none.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// The library refuses to compute the metric.
    Undefined,
    /// Zero denominator; reported as `+inf`.
    Infinite,
    Value(Rational),
}

impl Outcome {
    pub fn of(r: &Result<MetricResult, FairnessError>) -> Self {
        match r {
            Err(_) => Outcome::Undefined,
            Ok(m) => m.exact.map_or(Outcome::Infinite, Outcome::Value),
        }
    }

    pub fn value(&self) -> Option<Rational> {
        match self {
            Outcome::Value(v) => Some(*v),
            _ => None,
        }
    }
}

/// Labelled rows. A subgroup is any list of row indices; subgroups may
/// overlap, which is how intersectional families are pooled.
pub struct Rows<'a> {
    pub y_true: &'a [usize],
    pub y_pred: &'a [usize],
    pub n_classes: usize,
}

fn ratio(num: usize, den: usize) -> Option<Rational> {
    (den > 0).then(|| q(num as i128, den as i128))
}

impl Rows<'_> {
    pub fn pass_rate(&self, group: &[usize], c: usize) -> Option<Rational> {
        let hits = group.iter().filter(|&&i| self.y_pred[i] == c).count();
        ratio(hits, group.len())
    }

    pub fn correct_rate(&self, group: &[usize], c: usize) -> Option<Rational> {
        let hits = group
            .iter()
            .filter(|&&i| self.y_pred[i] == c && self.y_true[i] == c)
            .count();
        ratio(hits, group.len())
    }

    pub fn tpr(&self, group: &[usize], c: usize) -> Option<Rational> {
        let actual: Vec<usize> = group.iter().copied().filter(|&i| self.y_true[i] == c).collect();
        let hits = actual.iter().filter(|&&i| self.y_pred[i] == c).count();
        ratio(hits, actual.len())
    }

    pub fn fpr(&self, group: &[usize], c: usize) -> Option<Rational> {
        let negatives: Vec<usize> = group.iter().copied().filter(|&i| self.y_true[i] != c).collect();
        let hits = negatives.iter().filter(|&&i| self.y_pred[i] == c).count();
        ratio(hits, negatives.len())
    }
}

fn extremes(values: &[Rational]) -> Option<(Rational, Rational)> {
    let lo = values.iter().min()?;
    let hi = values.iter().max()?;
    Some((*lo, *hi))
}

pub fn oracle_di(rows: &Rows, unpriv: &[usize], priv_: &[usize], pos: usize) -> Outcome {
    match (rows.pass_rate(unpriv, pos), rows.pass_rate(priv_, pos)) {
        (Some(_), Some(p)) if p.is_zero() => Outcome::Infinite,
        (Some(u), Some(p)) => Outcome::Value(u / p),
        _ => Outcome::Undefined,
    }
}

pub fn oracle_spd(rows: &Rows, unpriv: &[usize], priv_: &[usize], pos: usize) -> Outcome {
    match (rows.pass_rate(unpriv, pos), rows.pass_rate(priv_, pos)) {
        (Some(u), Some(p)) => Outcome::Value(u - p),
        _ => Outcome::Undefined,
    }
}

/// Per class: min over non-empty subgroups of the correct rate over the max.
pub fn oracle_di_multiclass(rows: &Rows, groups: &[Vec<usize>]) -> Vec<Outcome> {
    let present: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if present.len() < 2 {
        return vec![Outcome::Undefined; rows.n_classes];
    }
    (0..rows.n_classes)
        .map(|c| {
            let rates: Vec<Rational> = present.iter().map(|g| rows.correct_rate(g, c).unwrap()).collect();
            let (lo, hi) = extremes(&rates).unwrap();
            if hi.is_zero() {
                Outcome::Infinite
            } else {
                Outcome::Value(lo / hi)
            }
        })
        .collect()
}

fn tpr_cells(rows: &Rows, groups: &[Vec<usize>], classes: &[usize]) -> Vec<Rational> {
    let mut out = Vec::new();
    for g in groups {
        for &c in classes {
            if let Some(r) = rows.tpr(g, c) {
                out.push(r);
            }
        }
    }
    out
}

fn fpr_cells(rows: &Rows, groups: &[Vec<usize>], classes: &[usize]) -> Vec<Rational> {
    let mut out = Vec::new();
    for g in groups {
        for &c in classes {
            if let Some(r) = rows.fpr(g, c) {
                out.push(r);
            }
        }
    }
    out
}

pub fn oracle_eq_opp(rows: &Rows, groups: &[Vec<usize>], classes: &[usize]) -> Outcome {
    match extremes(&tpr_cells(rows, groups, classes)) {
        Some((lo, hi)) => Outcome::Value(hi - lo),
        None => Outcome::Undefined,
    }
}

pub fn oracle_eq_odds(rows: &Rows, groups: &[Vec<usize>], classes: &[usize]) -> Outcome {
    let t = extremes(&tpr_cells(rows, groups, classes));
    let f = extremes(&fpr_cells(rows, groups, classes));
    match (t, f) {
        (Some((tlo, thi)), Some((flo, fhi))) => Outcome::Value(((thi - tlo) - (fhi - flo)).abs()),
        _ => Outcome::Undefined,
    }
}

/// Worst per-class min/max pass-rate ratio over the non-empty subgroups.
pub fn oracle_pass_ratio(rows: &Rows, groups: &[Vec<usize>], classes: &[usize]) -> Outcome {
    let present: Vec<&Vec<usize>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if present.len() < 2 {
        return Outcome::Undefined;
    }
    let mut best: Option<Rational> = None;
    for &c in classes {
        let rates: Vec<Rational> = present.iter().map(|g| rows.pass_rate(g, c).unwrap()).collect();
        let (lo, hi) = extremes(&rates).unwrap();
        if hi.is_zero() {
            continue;
        }
        let r = lo / hi;
        best = Some(best.map_or(r, |b: Rational| b.min(r)));
    }
    best.map_or(Outcome::Undefined, Outcome::Value)
}

pub fn oracle_eopp_ratio(rows: &Rows, groups: &[Vec<usize>], classes: &[usize]) -> Outcome {
    match extremes(&tpr_cells(rows, groups, classes)) {
        Some((_, hi)) if hi.is_zero() => Outcome::Undefined,
        Some((lo, hi)) => Outcome::Value(lo / hi),
        None => Outcome::Undefined,
    }
}

/// Minimum over families of the smallest pairwise pass-rate ratio, pairs
/// with a zero rate left out.
pub fn oracle_worst_case_di(rows: &Rows, families: &[Vec<Vec<usize>>], classes: &[usize]) -> Outcome {
    let mut best: Option<Rational> = None;
    for family in families {
        let present: Vec<&Vec<usize>> = family.iter().filter(|g| !g.is_empty()).collect();
        if present.len() < 2 {
            continue;
        }
        for &c in classes {
            for a in 0..present.len() {
                for b in a + 1..present.len() {
                    let ra = rows.pass_rate(present[a], c).unwrap();
                    let rb = rows.pass_rate(present[b], c).unwrap();
                    if ra.is_zero() || rb.is_zero() {
                        continue;
                    }
                    let r = if ra < rb { ra / rb } else { rb / ra };
                    best = Some(best.map_or(r, |m: Rational| m.min(r)));
                }
            }
        }
    }
    best.map_or(Outcome::Undefined, Outcome::Value)
}

/// Verdict a difference metric should get at threshold 1/5.
pub fn difference_verdict(v: &Rational) -> Verdict {
    if v.abs() < q(1, 5) {
        Verdict::Fair
    } else {
        Verdict::Unfair
    }
}

/// Verdict a ratio metric should get at threshold 4/5.
pub fn ratio_verdict(o: &Outcome) -> Verdict {
    match o {
        Outcome::Value(v) if *v >= q(4, 5) => Verdict::Fair,
        _ => Verdict::Unfair,
    }
}

/// `|v|` in whole hundredths, rounded half up.
pub fn hundredths(v: &Rational) -> i128 {
    let scaled = v.abs() * q(100, 1);
    let floor = scaled.numer().div_euclid(*scaled.denom());
    if scaled - q(floor, 1) >= q(1, 2) {
        floor + 1
    } else {
        floor
    }
}

/// Largest point of `{1, 6, 11, …, 96}` hundredths not above the rounded
/// magnitude; 0 for a magnitude that rounds to zero.
pub fn oracle_max_threshold(v: &Rational) -> Option<i128> {
    let h = hundredths(v);
    if h == 0 {
        return Some(0);
    }
    if h > 96 {
        return None;
    }
    (0..20).map(|k| 1 + 5 * k).filter(|&g| g <= h).max()
}

/// Subgroups `{i : groups[i] == s}` for `s` in `0..n_groups`.
pub fn partition(groups: &[usize], n_groups: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_groups];
    for (i, &s) in groups.iter().enumerate() {
        out[s].push(i);
    }
    out
}

/// A random labelled dataset of at most `max_rows` rows.
#[derive(Debug, Clone)]
pub struct RandomAudit {
    pub y_true: Vec<usize>,
    pub y_pred: Vec<usize>,
    pub groups: Vec<usize>,
    pub mask: Vec<bool>,
    pub n_classes: usize,
    pub n_groups: usize,
}

pub fn random_audit(rng: &mut ChaCha8Rng, max_rows: usize) -> RandomAudit {
    let n = rng.gen_range(1..=max_rows);
    let n_classes = rng.gen_range(2..=4);
    let n_groups = rng.gen_range(2..=4);
    // Skewed draws make empty cells, zero rates and ties common.
    let skew = rng.gen_range(0.0..0.9);
    let draw = |k: usize, rng: &mut ChaCha8Rng| {
        if rng.gen_bool(skew) {
            0
        } else {
            rng.gen_range(0..k)
        }
    };
    let y_true: Vec<usize> = (0..n).map(|_| draw(n_classes, rng)).collect();
    let y_pred: Vec<usize> = (0..n)
        .map(|i| {
            if rng.gen_bool(0.5) {
                y_true[i]
            } else {
                draw(n_classes, rng)
            }
        })
        .collect();
    let groups: Vec<usize> = (0..n).map(|_| draw(n_groups, rng)).collect();
    let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
    RandomAudit {
        y_true,
        y_pred,
        groups,
        mask,
        n_classes,
        n_groups,
    }
}

// ---------------------------------------------------------------------------
// Dense QP oracle for the soft-margin dual

#[derive(Debug, Clone, Copy)]
pub enum OracleKernel {
    Linear,
    Rbf(f64),
    /// `(x·y + coef)^degree`
    Poly { degree: i32, coef: f64 },
}

impl OracleKernel {
    pub fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        match *self {
            OracleKernel::Linear => dot,
            OracleKernel::Rbf(g) => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-g * d2).exp()
            }
            OracleKernel::Poly { degree, coef } => (dot + coef).powi(degree),
        }
    }
}

pub fn q_matrix(x: &[Vec<f64>], y: &[f64], kernel: OracleKernel) -> Vec<Vec<f64>> {
    let n = x.len();
    (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * kernel.k(&x[i], &x[j])).collect())
        .collect()
}

/// `Σα − ½αᵀQα`
pub fn dual_objective(qm: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let quad: f64 = (0..alpha.len())
        .map(|i| alpha[i] * (0..alpha.len()).map(|j| qm[i][j] * alpha[j]).sum::<f64>())
        .sum();
    alpha.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto `{0 ≤ α ≤ u, yᵀα = 0}`.
///
/// With `α(λ) = clip(v − λy, 0, u)` the constraint `yᵀα(λ)` is piecewise
/// linear and non-increasing in `λ`, so the root is found exactly between
/// two consecutive breakpoints.
pub fn project(v: &[f64], y: &[f64], upper: &[f64]) -> Vec<f64> {
    let at = |lambda: f64| -> Vec<f64> {
        v.iter()
            .zip(y)
            .zip(upper)
            .map(|((&vi, &yi), &ui)| (vi - lambda * yi).clamp(0.0, ui))
            .collect()
    };
    let g = |lambda: f64| -> f64 { at(lambda).iter().zip(y).map(|(ai, yi)| ai * yi).sum() };
    let mut points: Vec<f64> = Vec::with_capacity(2 * v.len());
    for ((&vi, &yi), &ui) in v.iter().zip(y).zip(upper) {
        points.push(vi / yi);
        points.push((vi - ui) / yi);
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    let values: Vec<f64> = points.iter().map(|&l| g(l)).collect();
    if values[0] <= 0.0 {
        return at(points[0]);
    }
    for k in 1..points.len() {
        if values[k] <= 0.0 {
            let (l0, l1, g0, g1) = (points[k - 1], points[k], values[k - 1], values[k]);
            let lambda = if g0 == g1 { l1 } else { l0 + (l1 - l0) * g0 / (g0 - g1) };
            return at(lambda);
        }
    }
    at(*points.last().unwrap())
}

/// Maximizes the dual by accelerated projected gradient with restarts.
pub fn qp_oracle(qm: &[Vec<f64>], y: &[f64], upper: &[f64]) -> Vec<f64> {
    let n = y.len();
    let lipschitz = qm
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        .max(1e-12);
    let step = 1.0 / lipschitz;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| 1.0 - (0..n).map(|j| qm[i][j] * a[j]).sum::<f64>())
            .collect()
    };
    let mut alpha = vec![0.0; n];
    let mut look = alpha.clone();
    let mut t = 1.0f64;
    let mut best = dual_objective(qm, &alpha);
    for _ in 0..200_000 {
        let g = grad(&look);
        let moved: Vec<f64> = look.iter().zip(&g).map(|(a, gi)| a + step * gi).collect();
        let next = project(&moved, y, upper);
        let value = dual_objective(qm, &next);
        let change: f64 = next.iter().zip(&alpha).map(|(a, b)| (a - b).abs()).sum();
        if value < best && t > 1.0 {
            // Momentum overshot: restart from the last iterate.
            t = 1.0;
            look = alpha.clone();
            continue;
        }
        best = value;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        look = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        alpha = next;
        t = t_next;
        if change < 1e-14 {
            break;
        }
    }
    alpha
}

/// Largest KKT violation of multipliers `alpha` with bias `b`, measured on
/// margins `y_i f(x_i)`.
pub fn kkt_violation(qm: &[Vec<f64>], y: &[f64], upper: &[f64], alpha: &[f64], b: f64) -> f64 {
    let n = y.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        // y_i f(x_i) = Σ_j Q_ij α_j + y_i b
        let margin: f64 = (0..n).map(|j| qm[i][j] * alpha[j]).sum::<f64>() + y[i] * b;
        let v = if alpha[i] <= 1e-12 {
            (1.0 - margin).max(0.0)
        } else if alpha[i] >= upper[i] - 1e-12 {
            (margin - 1.0).max(0.0)
        } else {
            (margin - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// A random binary problem with `n ≤ max_n` rows and both labels present.
pub struct RandomSvm {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub weights: Vec<f64>,
    pub c: f64,
    pub kernel: OracleKernel,
}

pub fn random_svm(rng: &mut ChaCha8Rng, max_n: usize) -> RandomSvm {
    let n = rng.gen_range(4..=max_n);
    let d = rng.gen_range(2..=5);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut y: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
    y[0] = 1.0;
    y[1] = -1.0;
    let weights = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let c = [0.1, 1.0, 10.0][rng.gen_range(0..3)];
    let kernel = match rng.gen_range(0..3) {
        0 => OracleKernel::Linear,
        1 => OracleKernel::Rbf(rng.gen_range(0.2..2.0)),
        _ => OracleKernel::Poly { degree: 2, coef: 1.0 },
    };
    RandomSvm { x, y, weights, c, kernel }
}

// ---------------------------------------------------------------------------
// Monte Carlo estimate of "at least one event occurs"

/// Fraction of `trials` in which at least one independent event with the
/// given probabilities fires.
pub fn mc_at_least_one(rng: &mut ChaCha8Rng, probabilities: &[f64], trials: usize) -> f64 {
    let hits = (0..trials)
        .filter(|_| probabilities.iter().any(|&p| rng.gen::<f64>() < p))
        .count();
    hits as f64 / trials as f64
}

// ---------------------------------------------------------------------------
// Misc

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_config() -> std::path::PathBuf {
    fixture_dir().join("fixture_config.toml")
}

/// Central-difference derivative of `f` at `x` along coordinate `k`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[k] += h;
    down[k] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

/// The bundled fixture, cleaned and one-hot encoded under `rule`.
pub fn fixture_encoded(rule: fairkit::dataset::TargetRule) -> fairkit::dataset::EncodedMatrix {
    use fairkit::dataset::*;
    let cfg = fairkit::config::RunConfig::load(fixture_config()).expect("fixture config");
    let raw = load_csv(cfg.input_path(), &cfg.schema).expect("fixture csv");
    let derived = derive_target(&raw, &rule, &cfg.target.columns).expect("target");
    let kept = drop_uninformative(&derived, &cfg.id_columns).expect("drop");
    one_hot_encode(&impute_missing(&kept).expect("impute")).expect("encode")
}

/// Imbalanced all-nominal data: 2 to 4 classes, every class present.
pub fn random_nominal(rng: &mut ChaCha8Rng) -> fairkit::dataset::CategoricalDataset {
    use fairkit::dataset::{CategoricalDataset, Schema};
    let n_classes = rng.gen_range(2..=4);
    let n_features = rng.gen_range(1..=5);
    let cards: Vec<usize> = (0..n_features).map(|_| rng.gen_range(2..=5)).collect();
    let mut sizes: Vec<usize> = (0..n_classes).map(|_| rng.gen_range(1..=25)).collect();
    sizes[rng.gen_range(0..n_classes)] = rng.gen_range(30..=60);
    let mut records = Vec::new();
    let mut target = Vec::new();
    for (c, &m) in sizes.iter().enumerate() {
        for _ in 0..m {
            // Values lean towards the class index so the metric has something to see.
            let row = cards
                .iter()
                .map(|&card| {
                    let v = if rng.gen_bool(0.5) { c % card } else { rng.gen_range(0..card) };
                    format!("v{v}")
                })
                .collect();
            records.push(row);
            target.push(c as u32);
        }
    }
    let columns: Vec<String> = (0..n_features).map(|f| format!("f{f}")).collect();
    let levels = (0..n_classes).map(|c| format!("c{c}")).collect();
    CategoricalDataset::from_records(&Schema::new(columns), &records).with_target(target, levels)
}

/// Value difference between two rows recounted from the raw data.
pub fn oracle_vdm(rows: &[Vec<u32>], labels: &[u32], n_classes: usize, a: &[u32], b: &[u32]) -> f64 {
    let mut total = 0.0;
    for f in 0..a.len() {
        if a[f] == b[f] {
            continue;
        }
        for c in 0..n_classes {
            let share = |v: u32| {
                let with_v: Vec<usize> = (0..rows.len()).filter(|&i| rows[i][f] == v).collect();
                let in_c = with_v.iter().filter(|&&i| labels[i] as usize == c).count();
                in_c as f64 / with_v.len() as f64
            };
            total += (share(a[f]) - share(b[f])).abs();
        }
    }
    total
}

/// Relative error ‖g − ĝ‖ / (‖g‖ + ‖ĝ‖) between the analytic gradient and
/// central differences, on a small random batch with random sample weights.
pub fn mlp_gradient_error(
    activation: fairkit::mlp::Activation,
    loss: fairkit::mlp::Loss,
    seed: u64,
) -> f64 {
    use fairkit::mlp::{self, MlpModel, MlpParams};
    let mut r = rng(seed);
    let (n, d, k) = (6, 4, 3);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let x = fairkit::matrix::DenseMatrix::from_rows(&rows);
    let targets: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
    let weights: Vec<f64> = (0..n).map(|_| r.gen_range(0.5..2.0)).collect();
    let params = MlpParams {
        units1: 5,
        units2: 4,
        activation,
        loss,
        seed,
        ..MlpParams::default()
    };
    let model = MlpModel::new(d, k, &params);
    let theta = model.flatten();
    let analytic = mlp::gradient(&model, &x, &targets, &weights, loss).1.flatten();
    let f = |t: &[f64]| {
        let mut m = model.clone();
        m.set_flat(t);
        mlp::batch_loss(&m, &x, &targets, &weights, loss)
    };
    let numeric: Vec<f64> = (0..theta.len()).map(|i| central_difference(&f, &theta, i, 1e-6)).collect();
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (norm(&analytic) + norm(&numeric)).max(1e-300)
}

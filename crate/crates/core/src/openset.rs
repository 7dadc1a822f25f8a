//! Open-set prediction: the max-probability threshold baseline and
//! OpenMax (mean activation vectors, Weibull tail models over distances,
//! and rank-weighted activation revision with an explicit unknown class).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax_row, softmax_row_into, LabelVector, Matrix, ProbMatrix, RowMode};

pub const DEFAULT_RETAIN_Q: f64 = 0.95;
pub const DEFAULT_TAIL_SIZE: usize = 20;
pub const DEFAULT_ALPHA: usize = 3;
pub const MIN_THRESHOLD_VALIDATION: usize = 20;
pub const MIN_TAIL_SIZE: usize = 5;

const SHAPE_BRACKET: (f64, f64) = (1e-3, 1e3);
const SHAPE_TOL: f64 = 1e-10;

/// How the threshold was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ThresholdSelection {
    Fixed,
    ValidationQuantile { q: f64 },
}

/// Predict the argmax class when its probability reaches `tau`, else unknown.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub tau: f64,
    pub selection: ThresholdSelection,
}

impl ThresholdRule {
    /// A fixed rule; `tau` is clamped into `[0, 1]`.
    pub fn fixed(tau: f64) -> Self {
        Self {
            tau: tau.clamp(0.0, 1.0),
            selection: ThresholdSelection::Fixed,
        }
    }

    /// Chooses `tau` on known-only validation probabilities.
    pub fn from_validation(val_probs: &ProbMatrix, retain_q: f64) -> Result<Self> {
        Ok(Self {
            tau: choose_threshold(val_probs, retain_q)?,
            selection: ThresholdSelection::ValidationQuantile { q: retain_q },
        })
    }
}

/// Labels in `[0, K]`: argmax if its probability is at least `tau`, else `K`.
pub fn threshold_predict(probs: &ProbMatrix, rule: &ThresholdRule) -> Result<LabelVector> {
    let k = probs.cols();
    let tau = rule.tau.clamp(0.0, 1.0);
    let mut labels = Vec::with_capacity(probs.rows());
    for row in probs.iter_rows() {
        let (j, p) = argmax_row(row)?;
        labels.push(if p >= tau { j } else { k });
    }
    LabelVector::new(labels, k)
}

/// The `(1 − q)` lower quantile of the per-row maximum probability, so at
/// least a fraction `q` of validation knowns stay known.
pub fn choose_threshold(val_probs: &ProbMatrix, retain_q: f64) -> Result<f64> {
    if !(retain_q > 0.0 && retain_q <= 1.0) {
        return Err(Error::invalid(format!(
            "retain fraction {retain_q} is not in (0, 1]"
        )));
    }
    if val_probs.rows() < MIN_THRESHOLD_VALIDATION {
        return Err(Error::fit(format!(
            "threshold selection needs at least {MIN_THRESHOLD_VALIDATION} validation rows, got {}",
            val_probs.rows()
        )));
    }
    let mut maxes: Vec<f64> = val_probs
        .iter_rows()
        .map(|r| argmax_row(r).map(|(_, v)| v))
        .collect::<Result<_>>()?;
    maxes.sort_by(f64::total_cmp);
    let idx = ((1.0 - retain_q) * (maxes.len() - 1) as f64).floor() as usize;
    Ok(maxes[idx.min(maxes.len() - 1)])
}

/// Distance between an activation vector and a class mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Euclidean,
    Cosine,
}

impl Distance {
    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Distance::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            Distance::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Distance::Euclidean),
            "cosine" => Ok(Distance::Cosine),
            other => Err(Error::invalid(format!("unknown distance '{other}'"))),
        }
    }
}

/// Mean activation vector per class over rows with `label == prediction`.
///
/// Every class needs at least `min_correct` such rows.
pub fn compute_mavs(
    activations: &Matrix,
    labels: &LabelVector,
    predictions: &[usize],
    min_correct: usize,
) -> Result<Vec<Vec<f64>>> {
    if activations.rows() != labels.len() || predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} activation rows, {} labels, {} predictions",
            activations.rows(),
            labels.len(),
            predictions.len()
        )));
    }
    let k = labels.num_known();
    let d = activations.cols();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for ((row, &y), &p) in activations.iter_rows().zip(labels.iter()).zip(predictions) {
        if y < k && y == p {
            counts[y] += 1;
            sums[y].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
    }
    for (j, (sum, &n)) in sums.iter_mut().zip(&counts).enumerate() {
        if n == 0 || n < min_correct {
            return Err(Error::fit(format!(
                "class {j} has {n} correctly classified samples, need {}",
                min_correct.max(1)
            )));
        }
        sum.iter_mut().for_each(|s| *s /= n as f64);
    }
    Ok(sums)
}

/// Two-parameter Weibull fitted to the largest distances of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullTailModel {
    pub shape: f64,
    pub scale: f64,
    pub tail_size: usize,
}

/// `1 − exp(−(d/λ)^k)` for `d > 0`, otherwise 0.
pub fn weibull_cdf(d: f64, model: &WeibullTailModel) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    -(-(d / model.scale).powf(model.shape)).exp_m1()
}

/// Weibull log-likelihood of `data` under shape `k` and scale `scale`.
pub fn weibull_log_likelihood(data: &[f64], k: f64, scale: f64) -> f64 {
    data.iter()
        .map(|&d| {
            let z = d / scale;
            k.ln() - scale.ln() + (k - 1.0) * z.ln() - z.powf(k)
        })
        .sum()
}

/// Profile score equation for the shape, evaluated on log-ratios
/// `x_i = ln(d_i / max d) ≤ 0` so the weights never overflow.
fn shape_equation(log_ratios: &[f64], mean_log: f64, k: f64) -> (f64, f64) {
    let mut wsum = 0.0;
    let mut wx = 0.0;
    for &x in log_ratios {
        let w = (k * x).exp();
        wsum += w;
        wx += w * x;
    }
    (wx / wsum - 1.0 / k - mean_log, wsum)
}

/// Maximum-likelihood Weibull fit on the `tail_size` largest distances.
pub fn fit_weibull_tail(distances: &[f64], tail_size: usize) -> Result<WeibullTailModel> {
    if tail_size == 0 {
        return Err(Error::invalid("tail size must be positive"));
    }
    if distances.len() < tail_size {
        return Err(Error::fit(format!(
            "{} distances available for a tail of {tail_size}",
            distances.len()
        )));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(Error::fit(format!(
            "distance {d} is not positive and finite"
        )));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let tail = &sorted[..tail_size];
    let dmax = tail[0];
    if tail.iter().all(|&d| d == dmax) {
        return Err(Error::fit(
            "tail distances are all equal; Weibull shape is unbounded",
        ));
    }

    let log_ratios: Vec<f64> = tail.iter().map(|&d| (d / dmax).ln()).collect();
    let mean_log = log_ratios.iter().sum::<f64>() / tail_size as f64;
    let g = |k: f64| shape_equation(&log_ratios, mean_log, k).0;

    let (mut lo, mut hi) = SHAPE_BRACKET;
    if g(hi) <= 0.0 {
        return Err(Error::fit(format!(
            "Weibull shape exceeds {hi}; tail is too concentrated"
        )));
    }
    if g(lo) >= 0.0 {
        return Err(Error::fit(format!("Weibull shape is below {lo}")));
    }
    while hi - lo > SHAPE_TOL {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = if g(lo).abs() <= g(hi).abs() { lo } else { hi };
    let (_, wsum) = shape_equation(&log_ratios, mean_log, k);
    let scale = dmax * (wsum / tail_size as f64).powf(1.0 / k);

    Ok(WeibullTailModel {
        shape: k,
        scale,
        tail_size,
    })
}

/// Fitted OpenMax state: one mean activation vector and one tail model
/// per known class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenMaxModel {
    pub mavs: Vec<Vec<f64>>,
    pub tails: Vec<WeibullTailModel>,
    /// Number of top-ranked classes whose activations are revised.
    pub alpha: usize,
    pub eta: usize,
    pub distance: Distance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenMaxConfig {
    pub eta: usize,
    /// Defaults to `min(3, K)` when `None`.
    pub alpha: Option<usize>,
    pub distance: Distance,
}

impl Default for OpenMaxConfig {
    fn default() -> Self {
        Self {
            eta: DEFAULT_TAIL_SIZE,
            alpha: None,
            distance: Distance::Euclidean,
        }
    }
}

impl OpenMaxModel {
    /// Fits MAVs and per-class tails on training activations.
    pub fn fit(
        activations: &Matrix,
        labels: &LabelVector,
        predictions: &[usize],
        config: OpenMaxConfig,
    ) -> Result<Self> {
        let k = labels.num_known();
        if config.eta < MIN_TAIL_SIZE {
            return Err(Error::invalid(format!(
                "tail size {} is below the minimum of {MIN_TAIL_SIZE}",
                config.eta
            )));
        }
        let alpha = config.alpha.unwrap_or(DEFAULT_ALPHA.min(k));
        if !(1..=k).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} is not in 1..={k}")));
        }
        let mavs = compute_mavs(activations, labels, predictions, config.eta)?;
        let mut tails = Vec::with_capacity(k);
        for (j, mav) in mavs.iter().enumerate() {
            let dists: Vec<f64> = activations
                .iter_rows()
                .zip(labels.iter().zip(predictions))
                .filter(|(_, (&y, &p))| y == j && p == j)
                .map(|(row, _)| config.distance.eval(row, mav))
                .collect();
            let tail = fit_weibull_tail(&dists, config.eta)
                .map_err(|e| Error::fit(format!("class {j}: {e}")))?;
            tails.push(tail);
        }
        Ok(Self {
            mavs,
            tails,
            alpha,
            eta: config.eta,
            distance: config.distance,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.mavs.len()
    }

    /// Checks that the model is fitted and internally consistent.
    pub fn validate(&self) -> Result<()> {
        let k = self.mavs.len();
        if k == 0 || self.tails.len() != k {
            return Err(Error::State(format!(
                "OpenMax model is not fitted ({k} MAVs, {} tails)",
                self.tails.len()
            )));
        }
        let d = self.mavs[0].len();
        if self.mavs.iter().any(|m| m.len() != d) {
            return Err(Error::State("MAVs have differing dimensions".into()));
        }
        if !(1..=k).contains(&self.alpha) {
            return Err(Error::State(format!(
                "alpha {} is not in 1..={k}",
                self.alpha
            )));
        }
        if self.tails.iter().any(|t| !(t.shape > 0.0 && t.scale > 0.0)) {
            return Err(Error::State(
                "tail model with non-positive parameters".into(),
            ));
        }
        Ok(())
    }
}

/// Class order by activation, descending, ties to the lower index.
fn rank_classes(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order
}

/// Per-class revision factors `ω`. The class at rank `r ≤ α` gets
/// `1 − ((α − r + 1)/α)·cdf_j`; all others keep 1.
pub fn rank_weights(v: &[f64], cdfs: &[f64], alpha: usize) -> Vec<f64> {
    let mut omega = vec![1.0; v.len()];
    for (r, &j) in rank_classes(v).iter().take(alpha).enumerate() {
        let weight = (alpha - r) as f64 / alpha as f64;
        omega[j] = 1.0 - weight * cdfs[j];
    }
    omega
}

/// `(v ⊙ ω, Σ v(1 − ω))`: the revised activations plus the unknown one.
pub fn revise_activations(v: &[f64], omega: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    let mut unknown = 0.0;
    for (&x, &w) in v.iter().zip(omega) {
        out.push(x * w);
        unknown += x * (1.0 - w);
    }
    out.push(unknown);
    out
}

/// Revised `K + 1` activation vector for one row.
pub fn openmax_recalibrate(v: &[f64], model: &OpenMaxModel) -> Result<Vec<f64>> {
    model.validate()?;
    if v.len() != model.num_classes() || v.len() != model.mavs[0].len() {
        return Err(Error::invalid(format!(
            "activation has {} entries; model has {} classes of dimension {}",
            v.len(),
            model.num_classes(),
            model.mavs[0].len()
        )));
    }
    let cdfs: Vec<f64> = model
        .mavs
        .iter()
        .zip(&model.tails)
        .map(|(mav, tail)| weibull_cdf(model.distance.eval(v, mav), tail))
        .collect();
    Ok(revise_activations(v, &rank_weights(v, &cdfs, model.alpha)))
}

/// Output of OpenMax over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenMaxOutput {
    /// Revised activations, `N × (K+1)`, pre-softmax.
    pub scores: Matrix,
    pub probs: ProbMatrix,
    pub labels: LabelVector,
}

/// Row-wise revision, softmax over `K + 1` and argmax (index `K` = unknown).
pub fn openmax_predict(activations: &Matrix, model: &OpenMaxModel) -> Result<OpenMaxOutput> {
    model.validate()?;
    let k = model.num_classes();
    if activations.rows() > 0 && activations.cols() != k {
        return Err(Error::invalid(format!(
            "activations have {} columns, model expects {k}",
            activations.cols()
        )));
    }
    if let Some((i, j)) = activations.first_non_finite() {
        return Err(Error::invalid(format!(
            "non-finite activation at row {i}, column {j}"
        )));
    }
    let n = activations.rows();
    let mut scores = Matrix::zeros(n, k + 1);
    let mut probs = Matrix::zeros(n, k + 1);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let revised = openmax_recalibrate(activations.row(i), model)?;
        scores.row_mut(i).copy_from_slice(&revised);
        softmax_row_into(&revised, 1.0, probs.row_mut(i));
        labels.push(argmax_row(probs.row(i))?.0);
    }
    Ok(OpenMaxOutput {
        scores,
        probs: ProbMatrix::from_trusted(probs, RowMode::Stochastic),
        labels: LabelVector::new(labels, k)?,
    })
}

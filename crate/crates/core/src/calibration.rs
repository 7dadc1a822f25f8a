//! Temperature scaling: the mean negative log-likelihood objective and a
//! one-dimensional fit of the temperature on held-out data.
//!
//! The fit searches over the inverse temperature `β = 1/T`. As a function
//! of `β` the objective is a log-sum-exp of linear functions minus a linear
//! function, hence convex, and golden-section search finds its global
//! minimum on the bracket.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{logsumexp, softmax, LabelVector, LogitMatrix, ProbMatrix};

pub const DEFAULT_BOUNDS: (f64, f64) = (0.05, 20.0);
pub const DEFAULT_TOL: f64 = 1e-4;
pub const MIN_VALIDATION: usize = 10;
const MAX_ITERATIONS: usize = 500;
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Search range `(T_min, T_max)` for the temperature.
    pub bounds: (f64, f64),
    /// Stop once the `β` bracket is narrower than `tol · β`.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: DEFAULT_BOUNDS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Lower,
    Upper,
}

/// Result of fitting the temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: f64,
    /// NLL at `T = 1`.
    pub nll_before: f64,
    /// NLL at the fitted temperature.
    pub nll_after: f64,
    pub iterations: usize,
    pub bounds: (f64, f64),
    /// Set when the optimum sits on a temperature bound.
    pub boundary: Option<Boundary>,
}

fn check_pair(logits: &LogitMatrix, labels: &LabelVector) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    labels.require_known_only()?;
    if let Some(row) = labels.iter().position(|&y| y >= logits.cols()) {
        return Err(Error::invalid(format!(
            "label {} at row {row} has no logit column",
            labels[row]
        )));
    }
    Ok(())
}

/// Mean NLL as a function of the inverse temperature, without validation.
fn nll_beta(logits: &LogitMatrix, labels: &[usize], beta: f64) -> f64 {
    let mut scaled = vec![0.0; logits.cols()];
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels) {
        for (s, &z) in scaled.iter_mut().zip(row) {
            *s = beta * z;
        }
        total += logsumexp(&scaled).expect("non-empty finite row") - scaled[y];
    }
    total / labels.len() as f64
}

/// Mean negative log-likelihood of the labels under `softmax(z / T)`.
pub fn nll(logits: &LogitMatrix, labels: &LabelVector, temperature: f64) -> Result<f64> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    check_pair(logits, labels)?;
    let mut scaled = vec![0.0; logits.cols()];
    let mut total = 0.0;
    for (row, &y) in logits.iter_rows().zip(labels.iter()) {
        for (s, &z) in scaled.iter_mut().zip(row) {
            *s = z / temperature;
        }
        total += logsumexp(&scaled)? - scaled[y];
    }
    Ok(total / labels.len() as f64)
}

/// Fits `T` by minimizing the validation NLL over `β = 1/T`.
pub fn fit_temperature(
    logits: &LogitMatrix,
    labels: &LabelVector,
    opts: FitOptions,
) -> Result<TemperatureFit> {
    let (t_min, t_max) = opts.bounds;
    if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
        return Err(Error::invalid(format!(
            "bad temperature bounds ({t_min}, {t_max})"
        )));
    }
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(Error::invalid(format!(
            "tolerance {} is not in (0, 1)",
            opts.tol
        )));
    }
    check_pair(logits, labels)?;
    if labels.len() < MIN_VALIDATION {
        return Err(Error::fit(format!(
            "validation set has {} samples, need at least {MIN_VALIDATION}",
            labels.len()
        )));
    }
    let degenerate = logits.iter_rows().all(|r| r.iter().all(|&v| v == r[0]));
    if degenerate {
        return Err(Error::fit(
            "every logit row is constant; temperature is unidentifiable",
        ));
    }

    let y = labels.as_slice();
    let f = |beta: f64| nll_beta(logits, y, beta);
    let (beta_lo, beta_hi) = (1.0 / t_max, 1.0 / t_min);

    let (mut a, mut b) = (beta_lo, beta_hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iterations = 0;
    while b - a >= opts.tol * 0.5 * (a + b) && iterations < MAX_ITERATIONS {
        // ties move right, toward colder temperatures
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        iterations += 1;
    }

    let nll_before = f(1.0);
    // Bounds first so exact ties resolve onto them; T = 1 competes only when
    // it is still inside the final bracket.
    let mut candidates = Vec::with_capacity(5);
    if b == beta_hi {
        candidates.push((beta_hi, f(beta_hi)));
    }
    if a == beta_lo {
        candidates.push((beta_lo, f(beta_lo)));
    }
    candidates.push((x1, f1));
    candidates.push((x2, f2));
    if (a..=b).contains(&1.0) {
        candidates.push((1.0, nll_before));
    }
    let (beta, nll_after) = candidates
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |best, c| {
            if c.1 < best.1 {
                c
            } else {
                best
            }
        });

    let boundary = if beta == beta_hi {
        Some(Boundary::Lower)
    } else if beta == beta_lo {
        Some(Boundary::Upper)
    } else {
        None
    };
    let temperature = match boundary {
        Some(Boundary::Lower) => t_min,
        Some(Boundary::Upper) => t_max,
        None => 1.0 / beta,
    };

    Ok(TemperatureFit {
        temperature,
        nll_before,
        nll_after,
        iterations,
        bounds: opts.bounds,
        boundary,
    })
}

/// Calibrated probabilities `softmax(z / T)`. Row argmax is unchanged.
pub fn apply_temperature(logits: &LogitMatrix, temperature: f64) -> Result<ProbMatrix> {
    softmax(logits, temperature)
}

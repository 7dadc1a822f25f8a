//! Calibration and accuracy metrics: expected calibration error with its
//! reliability table, closed-set and open-set Brier scores, the
//! product-rule unknown probability, and accuracies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax_row, LabelVector, Matrix, ProbMatrix, RowMode};

pub const DEFAULT_NUM_BINS: usize = 15;

/// One equal-width confidence bin `(lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean confidence of the samples in the bin, 0 when empty.
    pub avg_conf: f64,
    /// Fraction of correct samples in the bin, 0 when empty.
    pub accuracy: f64,
}

/// Reliability-diagram data: `M` bins partitioning `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
}

impl ReliabilityTable {
    pub fn num_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn total_count(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// ECE recomputed from the table.
    pub fn ece(&self) -> f64 {
        let n = self.total_count();
        if n == 0 {
            return 0.0;
        }
        self.bins
            .iter()
            .map(|b| (b.count as f64 / n as f64) * (b.accuracy - b.avg_conf).abs())
            .sum()
    }
}

#[inline]
fn bin_edge(m: usize, num_bins: usize) -> f64 {
    m as f64 / num_bins as f64
}

/// Zero-based bin for confidence `c`: bin `m` (1-based) holds
/// `((m-1)/M, m/M]`, and `c = 0` goes to the first bin.
pub fn bin_index(c: f64, num_bins: usize) -> usize {
    if c <= 0.0 {
        return 0;
    }
    let mut b = ((c * num_bins as f64).ceil() as usize).clamp(1, num_bins);
    // ceil(c·M) can land one off when c·M rounds; settle against the edges
    while b > 1 && c <= bin_edge(b - 1, num_bins) {
        b -= 1;
    }
    while b < num_bins && c > bin_edge(b, num_bins) {
        b += 1;
    }
    b - 1
}

/// ECE and reliability table from per-sample confidences and correctness.
pub fn ece_from_pairs(
    confidences: &[f64],
    correct: &[bool],
    num_bins: usize,
) -> Result<(f64, ReliabilityTable)> {
    if num_bins == 0 {
        return Err(Error::invalid("number of bins must be at least 1"));
    }
    if confidences.is_empty() {
        return Err(Error::invalid("ECE of an empty sample"));
    }
    if confidences.len() != correct.len() {
        return Err(Error::invalid(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if let Some(i) = confidences.iter().position(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::invalid(format!(
            "confidence {} at row {i} is outside [0, 1]",
            confidences[i]
        )));
    }

    let mut count = vec![0usize; num_bins];
    let mut conf_sum = vec![0.0; num_bins];
    let mut hits = vec![0usize; num_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = bin_index(c, num_bins);
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }

    let bins: Vec<ReliabilityBin> = (0..num_bins)
        .map(|b| {
            let (avg_conf, accuracy) = if count[b] > 0 {
                (
                    conf_sum[b] / count[b] as f64,
                    hits[b] as f64 / count[b] as f64,
                )
            } else {
                (0.0, 0.0)
            };
            ReliabilityBin {
                lo: bin_edge(b, num_bins),
                hi: bin_edge(b + 1, num_bins),
                count: count[b],
                avg_conf,
                accuracy,
            }
        })
        .collect();
    let table = ReliabilityTable { bins };
    Ok((table.ece(), table))
}

/// Per-row maximum probability.
pub fn confidences(probs: &Matrix) -> Vec<f64> {
    probs
        .iter_rows()
        .map(|r| argmax_row(r).map_or(0.0, |(_, v)| v))
        .collect()
}

/// ECE with predicted label = argmax and confidence = row maximum.
pub fn ece(
    probs: &ProbMatrix,
    labels: &LabelVector,
    num_bins: usize,
) -> Result<(f64, ReliabilityTable)> {
    check_rows(probs.rows(), labels.len())?;
    let mut conf = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    for (row, &y) in probs.iter_rows().zip(labels.iter()) {
        let (j, c) = argmax_row(row)?;
        conf.push(c);
        correct.push(j == y);
    }
    ece_from_pairs(&conf, &correct, num_bins)
}

/// ECE for externally decided labels (the threshold rule): confidence is
/// the probability `probs` assigns to the decided label, so an unknown
/// decision is scored by column `K` of an open-set matrix.
pub fn ece_with_predictions(
    probs: &ProbMatrix,
    predicted: &LabelVector,
    truth: &LabelVector,
    num_bins: usize,
) -> Result<(f64, ReliabilityTable)> {
    check_rows(probs.rows(), truth.len())?;
    check_rows(predicted.len(), truth.len())?;
    let mut conf = Vec::with_capacity(truth.len());
    for (i, &p) in predicted.iter().enumerate() {
        if p >= probs.cols() {
            return Err(Error::invalid(format!(
                "predicted label {p} at row {i} has no probability column"
            )));
        }
        conf.push(probs.get(i, p));
    }
    let correct: Vec<bool> = predicted
        .iter()
        .zip(truth.iter())
        .map(|(p, t)| p == t)
        .collect();
    ece_from_pairs(&conf, &correct, num_bins)
}

fn check_rows(rows: usize, labels: usize) -> Result<()> {
    if rows != labels {
        return Err(Error::invalid(format!(
            "{rows} prediction rows but {labels} labels"
        )));
    }
    Ok(())
}

/// Mean over samples of the squared distance to the one-hot target.
pub fn brier_closed(probs: &ProbMatrix, labels: &LabelVector) -> Result<f64> {
    check_rows(probs.rows(), labels.len())?;
    labels.require_known_only()?;
    if probs.cols() != labels.num_known() {
        return Err(Error::invalid(format!(
            "probabilities have {} columns for {} known classes",
            probs.cols(),
            labels.num_known()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("Brier score of an empty sample"));
    }
    Ok(squared_error_sum(probs, labels, probs.cols()) / labels.len() as f64)
}

fn squared_error_sum(probs: &Matrix, labels: &[usize], cols: usize) -> f64 {
    probs
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            row[..cols]
                .iter()
                .enumerate()
                .map(|(j, &p)| {
                    let target = if j == y { 1.0 } else { 0.0 };
                    (p - target) * (p - target)
                })
                .sum::<f64>()
        })
        .sum()
}

/// Probability of "none of the known classes": `∏ (1 − ŷ_i)`.
pub fn unknown_probability(row: &[f64]) -> Result<f64> {
    if let Some(i) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!(
            "entry {} at column {i} is outside [0, 1]",
            row[i]
        )));
    }
    Ok(row.iter().map(|p| 1.0 - p).product())
}

/// Appends the unknown-probability column, optionally renormalizing rows.
///
/// Without renormalization rows can sum above one (`[0.5, 0.5]` gains
/// `0.25`), so the result is in [`RowMode::Augmented`] mode.
pub fn extend_osr(probs: &ProbMatrix, renormalize: bool) -> Result<ProbMatrix> {
    let k = probs.cols();
    let mut out = Matrix::zeros(probs.rows(), k + 1);
    for (i, row) in probs.iter_rows().enumerate() {
        let unknown = unknown_probability(row)?;
        let dst = out.row_mut(i);
        dst[..k].copy_from_slice(row);
        dst[k] = unknown;
        if renormalize {
            let sum: f64 = dst.iter().sum();
            if sum > 0.0 {
                dst.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
    let mode = if renormalize {
        RowMode::Stochastic
    } else {
        RowMode::Augmented
    };
    Ok(ProbMatrix::from_trusted(out, mode))
}

/// Which columns the open-set Brier score sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BrierColumns {
    /// Only the first `K` (known) columns, the literal summation bound.
    Known,
    /// All `K + 1` columns, so missed unknowns are penalized.
    #[default]
    All,
}

/// Open-set Brier score over the `(K+1)`-column augmented prediction,
/// with unknown samples targeting column `K`. Unclamped.
pub fn brier_osr(
    probs_osr: &ProbMatrix,
    labels: &LabelVector,
    columns: BrierColumns,
) -> Result<f64> {
    check_rows(probs_osr.rows(), labels.len())?;
    let k = labels.num_known();
    if probs_osr.cols() != k + 1 {
        return Err(Error::invalid(format!(
            "open-set probabilities need {} columns, got {}",
            k + 1,
            probs_osr.cols()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("Brier score of an empty sample"));
    }
    let cols = match columns {
        BrierColumns::Known => k,
        BrierColumns::All => k + 1,
    };
    Ok(squared_error_sum(probs_osr, labels, cols) / labels.len() as f64)
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy_closed(probs: &Matrix, labels: &LabelVector) -> Result<f64> {
    check_rows(probs.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample"));
    }
    let mut hits = 0usize;
    for (row, &y) in probs.iter_rows().zip(labels.iter()) {
        hits += usize::from(argmax_row(row)?.0 == y);
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Fraction of predicted labels (unknown included as class `K`) that match.
pub fn accuracy_osr(predicted: &LabelVector, truth: &LabelVector) -> Result<f64> {
    check_rows(predicted.len(), truth.len())?;
    if truth.is_empty() {
        return Err(Error::invalid("accuracy of an empty sample"));
    }
    let hits = predicted
        .iter()
        .zip(truth.iter())
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

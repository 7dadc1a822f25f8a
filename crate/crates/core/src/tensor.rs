//! Dense row-major matrices and the numerically stable probability
//! transforms shared by the rest of the crate.
//!
//! Everything is `f64`. Inputs that arrive as `f32` are widened on load.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Row-sum tolerance for probability matrices.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::invalid(format!(
                "matrix shape {rows}x{cols} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row vectors. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Keeps only the rows whose index satisfies `keep`.
    pub fn select_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let mut data = Vec::new();
        let mut rows = 0;
        for i in 0..self.rows {
            if keep(i) {
                data.extend_from_slice(self.row(i));
                rows += 1;
            }
        }
        Self {
            rows,
            cols: self.cols,
            data,
        }
    }

    /// Position of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p / self.cols.max(1), p % self.cols.max(1)))
    }
}

/// N×K matrix of pre-softmax scores, N ≥ 1, K ≥ 2, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Matrix);

impl LogitMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() < 1 {
            return Err(Error::invalid("logit matrix needs at least one row"));
        }
        if m.cols() < 2 {
            return Err(Error::invalid(format!(
                "logit matrix needs at least two classes, got {}",
                m.cols()
            )));
        }
        if let Some((i, j)) = m.first_non_finite() {
            return Err(Error::invalid(format!(
                "non-finite logit at row {i}, column {j}"
            )));
        }
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Number of known classes.
    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.scaled(factor))
    }
}

impl Deref for LogitMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowMode {
    /// Every row sums to one.
    Stochastic,
    /// Every row sums to at most one.
    Subnormal,
    /// Entries in `[0, 1]` with no constraint on the row sum. The raw
    /// product-augmented open-set matrix lands here: `[0.5, 0.5]` becomes
    /// `[0.5, 0.5, 0.25]`.
    Augmented,
}

/// A matrix of probabilities in `[0, 1]`, either row-stochastic or
/// row-subnormal.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    data: Matrix,
    mode: RowMode,
}

impl ProbMatrix {
    pub fn new(data: Matrix, mode: RowMode) -> Result<Self> {
        for (i, row) in data.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::validation(format!(
                    "probability {} at row {i}, column {j} is outside [0, 1]",
                    row[j]
                )));
            }
            let sum: f64 = row.iter().sum();
            let ok = match mode {
                RowMode::Stochastic => (sum - 1.0).abs() <= ROW_SUM_TOL,
                RowMode::Subnormal => sum <= 1.0 + ROW_SUM_TOL,
                RowMode::Augmented => true,
            };
            if !ok {
                return Err(Error::validation(format!(
                    "row {i} sums to {sum}, not valid for {mode:?} mode"
                )));
            }
        }
        Ok(Self { data, mode })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], mode: RowMode) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?, mode)
    }

    /// Wraps data the caller has already constructed as valid.
    pub(crate) fn from_trusted(data: Matrix, mode: RowMode) -> Self {
        Self { data, mode }
    }

    pub fn mode(&self) -> RowMode {
        self.mode
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

impl Deref for ProbMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.data
    }
}

/// Integer class labels over `K` known classes. Index `K` is the single
/// unknown placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_known: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_known: usize) -> Result<Self> {
        if let Some(row) = labels.iter().position(|&l| l > num_known) {
            return Err(Error::validation(format!(
                "label {} at row {row} is out of range for {num_known} known classes",
                labels[row]
            )));
        }
        Ok(Self { labels, num_known })
    }

    /// Index used for the unknown class.
    pub fn unknown(&self) -> usize {
        self.num_known
    }

    pub fn num_known(&self) -> usize {
        self.num_known
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn is_unknown(&self, i: usize) -> bool {
        self.labels[i] == self.num_known
    }

    pub fn has_unknown(&self) -> bool {
        self.labels.contains(&self.num_known)
    }

    /// Fails if any label is the unknown index.
    pub fn require_known_only(&self) -> Result<()> {
        match self.labels.iter().position(|&l| l == self.num_known) {
            Some(row) => Err(Error::invalid(format!(
                "row {row} carries the unknown label {}; only known classes are allowed here",
                self.num_known
            ))),
            None => Ok(()),
        }
    }

    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        Self {
            labels: (0..self.labels.len())
                .filter(|&i| keep(i))
                .map(|i| self.labels[i])
                .collect(),
            num_known: self.num_known,
        }
    }
}

impl Deref for LabelVector {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.labels
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Writes the tempered softmax of `row` into `out`.
pub fn softmax_row_into(row: &[f64], temperature: f64, out: &mut [f64]) {
    debug_assert_eq!(row.len(), out.len());
    let mut max = f64::NEG_INFINITY;
    for (o, &z) in out.iter_mut().zip(row) {
        *o = z / temperature;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise tempered softmax of an arbitrary finite score matrix.
pub fn softmax_rows(scores: &Matrix, temperature: f64) -> Result<ProbMatrix> {
    check_temperature(temperature)?;
    if let Some((i, j)) = scores.first_non_finite() {
        return Err(Error::invalid(format!(
            "non-finite score at row {i}, column {j}"
        )));
    }
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for i in 0..scores.rows() {
        softmax_row_into(scores.row(i), temperature, out.row_mut(i));
    }
    Ok(ProbMatrix {
        data: out,
        mode: RowMode::Stochastic,
    })
}

/// `softmax(z / T)` per row, with per-row max subtraction.
pub fn softmax(logits: &LogitMatrix, temperature: f64) -> Result<ProbMatrix> {
    softmax_rows(logits, temperature)
}

/// `log Σ exp(x)` computed around the maximum.
pub fn logsumexp(row: &[f64]) -> Result<f64> {
    let (_, max) = argmax_row(row)?;
    if !max.is_finite() {
        return Err(Error::invalid("logsumexp needs finite entries"));
    }
    let sum: f64 = row.iter().map(|&x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// First index attaining the row maximum, with that maximum.
pub fn argmax_row(row: &[f64]) -> Result<(usize, f64)> {
    let (&first, rest) = row
        .split_first()
        .ok_or_else(|| Error::invalid("argmax of an empty row"))?;
    let mut best = (0, first);
    for (j, &v) in rest.iter().enumerate() {
        if v > best.1 {
            best = (j + 1, v);
        }
    }
    Ok(best)
}

/// Argmax index of every row.
pub fn argmax_labels(m: &Matrix) -> Vec<usize> {
    m.iter_rows()
        .map(|r| argmax_row(r).map_or(0, |(j, _)| j))
        .collect()
}

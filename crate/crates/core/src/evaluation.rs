//! Before/after-calibration metric reports for the three evaluation
//! methods, and a one-run experiment driver.
//!
//! Open-set decisions (threshold and OpenMax) are made on uncalibrated
//! scores; the temperature only rescales the reported confidence, so
//! each method has a single accuracy.

use crate::calibration::{fit_temperature, FitOptions, TemperatureFit};
use crate::dataio::{Method, MetricReport};
use crate::error::{Error, Result};
use crate::metrics::{
    accuracy_closed, accuracy_osr, brier_closed, brier_osr, ece, ece_with_predictions, extend_osr,
    BrierColumns, DEFAULT_NUM_BINS,
};
use crate::openset::{
    openmax_predict, threshold_predict, OpenMaxConfig, OpenMaxModel, ThresholdRule,
    DEFAULT_RETAIN_Q,
};
use crate::tensor::{argmax_labels, softmax, softmax_rows, LabelVector, LogitMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub num_bins: usize,
    /// Renormalize the product-augmented threshold predictions.
    pub renormalize_osr: bool,
    pub brier_columns: BrierColumns,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            num_bins: DEFAULT_NUM_BINS,
            renormalize_osr: false,
            brier_columns: BrierColumns::All,
        }
    }
}

fn condition(temperature: f64, calibrated: bool) -> (f64, Option<f64>) {
    if calibrated {
        (temperature, Some(temperature))
    } else {
        (1.0, None)
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "temperature must be positive and finite, got {t}"
        )))
    }
}

/// Closed-set reports on the rows with known labels.
pub fn evaluate_closed(
    logits: &LogitMatrix,
    labels: &LabelVector,
    temperature: f64,
    opts: &EvalOptions,
) -> Result<[MetricReport; 2]> {
    check_temperature(temperature)?;
    if logits.rows() != labels.len() {
        return Err(Error::invalid(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let keep: Vec<bool> = labels.iter().map(|&y| y < labels.num_known()).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::invalid(
            "closed-set evaluation needs known-class samples",
        ));
    }
    let known_logits = LogitMatrix::new(logits.select_rows(|i| keep[i]))?;
    let known_labels = labels.select(|i| keep[i]);
    let accuracy = accuracy_closed(&known_logits, &known_labels)?;

    let report = |calibrated: bool| -> Result<MetricReport> {
        let (t, recorded) = condition(temperature, calibrated);
        let probs = softmax(&known_logits, t)?;
        let (e, table) = ece(&probs, &known_labels, opts.num_bins)?;
        Ok(MetricReport {
            method: Method::ClosedSet,
            calibrated,
            brier: brier_closed(&probs, &known_labels)?,
            ece: e,
            accuracy,
            temperature: recorded,
            bins: table.bins,
        })
    };
    Ok([report(false)?, report(true)?])
}

/// Threshold-baseline reports. `predicted` holds the open-set decisions.
pub fn evaluate_threshold(
    logits: &LogitMatrix,
    labels: &LabelVector,
    predicted: &LabelVector,
    temperature: f64,
    opts: &EvalOptions,
) -> Result<[MetricReport; 2]> {
    check_temperature(temperature)?;
    let accuracy = accuracy_osr(predicted, labels)?;
    let report = |calibrated: bool| -> Result<MetricReport> {
        let (t, recorded) = condition(temperature, calibrated);
        let osr = extend_osr(&softmax(logits, t)?, opts.renormalize_osr)?;
        let (e, table) = ece_with_predictions(&osr, predicted, labels, opts.num_bins)?;
        Ok(MetricReport {
            method: Method::OpenSetThreshold,
            calibrated,
            brier: brier_osr(&osr, labels, opts.brier_columns)?,
            ece: e,
            accuracy,
            temperature: recorded,
            bins: table.bins,
        })
    };
    Ok([report(false)?, report(true)?])
}

/// OpenMax reports from revised `K + 1` activations.
pub fn evaluate_openmax(
    scores: &Matrix,
    labels: &LabelVector,
    temperature: f64,
    opts: &EvalOptions,
) -> Result<[MetricReport; 2]> {
    check_temperature(temperature)?;
    if scores.cols() != labels.num_known() + 1 {
        return Err(Error::invalid(format!(
            "OpenMax scores need {} columns, got {}",
            labels.num_known() + 1,
            scores.cols()
        )));
    }
    let predicted = LabelVector::new(argmax_labels(scores), labels.num_known())?;
    let accuracy = accuracy_osr(&predicted, labels)?;
    let report = |calibrated: bool| -> Result<MetricReport> {
        let (t, recorded) = condition(temperature, calibrated);
        let probs = softmax_rows(scores, t)?;
        let (e, table) = ece(&probs, labels, opts.num_bins)?;
        Ok(MetricReport {
            method: Method::OpenSetOpenMax,
            calibrated,
            brier: brier_osr(&probs, labels, opts.brier_columns)?,
            ece: e,
            accuracy,
            temperature: recorded,
            bins: table.bins,
        })
    };
    Ok([report(false)?, report(true)?])
}

/// How the baseline threshold is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    Fixed(f64),
    RetainQuantile(f64),
}

impl Default for ThresholdChoice {
    fn default() -> Self {
        ThresholdChoice::RetainQuantile(DEFAULT_RETAIN_Q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExperimentOptions {
    pub fit: FitOptions,
    pub threshold: ThresholdChoice,
    pub openmax: OpenMaxConfig,
    pub eval: EvalOptions,
}

/// Logits and labels for the three splits of one run.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentInputs<'a> {
    pub train_logits: &'a LogitMatrix,
    pub train_labels: &'a LabelVector,
    pub val_logits: &'a LogitMatrix,
    pub val_labels: &'a LabelVector,
    pub test_logits: &'a LogitMatrix,
    pub test_labels: &'a LabelVector,
}

impl<'a> ExperimentInputs<'a> {
    pub fn from_synth(data: &'a crate::synth::SynthData) -> Self {
        Self {
            train_logits: &data.train.logits,
            train_labels: &data.train.labels,
            val_logits: &data.val.logits,
            val_labels: &data.val.labels,
            test_logits: &data.test.logits,
            test_labels: &data.test.labels,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: TemperatureFit,
    pub threshold: ThresholdRule,
    pub openmax: OpenMaxModel,
    /// Closed, threshold, OpenMax; each before then after calibration.
    pub reports: Vec<MetricReport>,
}

/// Fits every post-hoc component on train/validation data and reports
/// all three methods on the test split.
pub fn run_experiment(
    inputs: ExperimentInputs<'_>,
    opts: &ExperimentOptions,
) -> Result<RunOutcome> {
    let fit = fit_temperature(inputs.val_logits, inputs.val_labels, opts.fit)?;
    let t = fit.temperature;

    let threshold = match opts.threshold {
        ThresholdChoice::Fixed(tau) => ThresholdRule::fixed(tau),
        ThresholdChoice::RetainQuantile(q) => {
            ThresholdRule::from_validation(&softmax(inputs.val_logits, 1.0)?, q)?
        }
    };
    let train_pred = argmax_labels(inputs.train_logits);
    let openmax = OpenMaxModel::fit(
        inputs.train_logits,
        inputs.train_labels,
        &train_pred,
        opts.openmax,
    )?;

    let mut reports = Vec::with_capacity(6);
    reports.extend(evaluate_closed(
        inputs.test_logits,
        inputs.test_labels,
        t,
        &opts.eval,
    )?);

    let raw = softmax(inputs.test_logits, 1.0)?;
    let decided = threshold_predict(&raw, &threshold)?;
    reports.extend(evaluate_threshold(
        inputs.test_logits,
        inputs.test_labels,
        &decided,
        t,
        &opts.eval,
    )?);

    let om = openmax_predict(inputs.test_logits, &openmax)?;
    reports.extend(evaluate_openmax(
        &om.scores,
        inputs.test_labels,
        t,
        &opts.eval,
    )?);

    Ok(RunOutcome {
        fit,
        threshold,
        openmax,
        reports,
    })
}

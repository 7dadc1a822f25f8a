//! Post-hoc calibration and open-set recognition evaluation.
//!
//! Given exported classifier logits (or activation vectors) and labels,
//! this crate fits temperature scaling, makes open-set predictions with a
//! max-probability threshold or OpenMax, and reports Brier score, expected
//! calibration error, accuracy and reliability-diagram bins, before and
//! after calibration.

pub mod calibration;
pub mod dataio;
pub mod diagram;
pub mod error;
pub mod evaluation;
pub mod metrics;
pub mod openset;
pub mod protocol;
pub mod synth;
pub mod tensor;

pub use calibration::{
    apply_temperature, fit_temperature, nll, Boundary, FitOptions, TemperatureFit,
};
pub use dataio::{ArrayFormat, Method, MetricReport, RunManifest};
pub use error::{Error, Result};
pub use evaluation::{
    EvalOptions, ExperimentInputs, ExperimentOptions, RunOutcome, ThresholdChoice,
};
pub use metrics::{BrierColumns, ReliabilityBin, ReliabilityTable};
pub use openset::{Distance, OpenMaxConfig, OpenMaxModel, ThresholdRule, WeibullTailModel};
pub use protocol::{AggregateReport, SplitSpec, Summary};
pub use synth::{SynthConfig, SynthData};
pub use tensor::{LabelVector, LogitMatrix, Matrix, ProbMatrix, RowMode};

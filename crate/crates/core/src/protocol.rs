//! Known/unknown class splits and multi-run aggregation.
//!
//! Splits are drawn with SplitMix64 so they can be reproduced in any
//! language:
//!
//! ```text
//! state  = seed XOR (run_index * 0x9E3779B97F4A7C15)      (wrapping)
//! next() : state += 0x9E3779B97F4A7C15
//!          z = state
//!          z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!          z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!          return z ^ (z >> 31)
//! below(n) = (next() as u128 * n) >> 64
//! ```
//!
//! A draw is the first `K` entries of a partial Fisher–Yates shuffle of
//! `0..total` (`for i in 0..K: swap(i, i + below(total - i))`), sorted
//! ascending. Run `r` keeps drawing from its own stream until its draw
//! differs from the known sets of runs `0..r` (while distinct sets remain),
//! so the runs of one experiment never repeat a split. Known ids are mapped
//! to `0..K` in ascending order; every other id maps to `K`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{Method, MetricReport, RunManifest};
use crate::error::{Error, Result};
use crate::tensor::LabelVector;

pub const DEFAULT_RUNS: u32 = 5;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    /// Generator for run `run_index` of experiment `seed`.
    pub fn for_run(seed: u64, run_index: u32) -> Self {
        Self::new(derive_seed(seed, run_index))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform integer in `0..n` by multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        ((u128::from(self.next_u64()) * n as u128) >> 64) as usize
    }
}

/// Initial SplitMix64 state for a run.
pub fn derive_seed(seed: u64, run_index: u32) -> u64 {
    seed ^ u64::from(run_index).wrapping_mul(GOLDEN_GAMMA)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub num_total_classes: usize,
    pub num_known: usize,
    pub seed: u64,
    pub run_index: u32,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.num_known && self.num_known < self.num_total_classes) {
            return Err(Error::invalid(format!(
                "need 1 <= known ({}) < total ({})",
                self.num_known, self.num_total_classes
            )));
        }
        Ok(())
    }
}

/// Draws the known classes for one run.
pub fn generate_split(spec: &SplitSpec, dataset_name: &str) -> Result<RunManifest> {
    spec.validate()?;
    let total = spec.num_total_classes;
    let k = spec.num_known;
    let distinct = combinations(total, k);
    let mut earlier: Vec<Vec<usize>> = Vec::with_capacity(spec.run_index as usize);
    let mut known = Vec::new();
    for run in 0..=spec.run_index {
        let mut rng = SplitMix64::for_run(spec.seed, run);
        known = draw_known(&mut rng, total, k);
        if (earlier.len() as u128) < distinct {
            while earlier.contains(&known) {
                known = draw_known(&mut rng, total, k);
            }
        }
        earlier.push(known.clone());
    }
    let class_remap: BTreeMap<usize, usize> = (0..total)
        .map(|id| (id, known.binary_search(&id).unwrap_or(k)))
        .collect();
    Ok(RunManifest {
        seed: spec.seed,
        num_total_classes: total,
        known_class_ids: known,
        class_remap,
        dataset_name: dataset_name.to_owned(),
        run_index: spec.run_index,
    })
}

fn draw_known(rng: &mut SplitMix64, total: usize, k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..total).collect();
    for i in 0..k {
        let j = i + rng.below(total - i);
        ids.swap(i, j);
    }
    let mut known = ids[..k].to_vec();
    known.sort_unstable();
    known
}

/// `C(n, k)`, saturating.
fn combinations(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    c
}

/// Maps original class ids to compact ids; every unknown id becomes `K`.
pub fn remap_labels(raw: &[usize], manifest: &RunManifest) -> Result<LabelVector> {
    let mut out = Vec::with_capacity(raw.len());
    for (row, &id) in raw.iter().enumerate() {
        let compact = manifest.class_remap.get(&id).ok_or_else(|| {
            Error::validation(format!(
                "raw label {id} at row {row} is not below {}",
                manifest.num_total_classes
            ))
        })?;
        out.push(*compact);
    }
    LabelVector::new(out, manifest.num_known())
}

/// Original id of a compact known id.
pub fn original_id(compact: usize, manifest: &RunManifest) -> Option<usize> {
    manifest.known_class_ids.get(compact).copied()
}

/// Mean, sample standard deviation and range of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Order-independent: values are sorted before summation.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = (v.iter().sum::<f64>() / n).clamp(v[0], v[v.len() - 1]);
        let std = if v.len() > 1 {
            let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

/// Metrics for one method and calibration condition, folded over runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub method: Method,
    pub calibrated: bool,
    pub runs: usize,
    pub brier: Summary,
    pub ece: Summary,
    pub accuracy: Summary,
    pub temperature: Option<Summary>,
}

pub fn aggregate_runs(reports: &[MetricReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("cannot aggregate zero reports"))?;
    if let Some(other) = reports
        .iter()
        .find(|r| r.method != first.method || r.calibrated != first.calibrated)
    {
        return Err(Error::invalid(format!(
            "mixed conditions: {} (calibrated={}) and {} (calibrated={})",
            first.method, first.calibrated, other.method, other.calibrated
        )));
    }
    let collect = |f: fn(&MetricReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    let temps: Vec<f64> = reports.iter().filter_map(|r| r.temperature).collect();
    Ok(AggregateReport {
        method: first.method,
        calibrated: first.calibrated,
        runs: reports.len(),
        brier: Summary::of(&collect(|r| r.brier)),
        ece: Summary::of(&collect(|r| r.ece)),
        accuracy: Summary::of(&collect(|r| r.accuracy)),
        temperature: (!temps.is_empty()).then(|| Summary::of(&temps)),
    })
}

//! Synthetic activations and logits with a known calibration state.
//!
//! Known class `j` is an isotropic Gaussian around `s·e_j`. Logits are the
//! Bayes posterior log-odds of that mixture, multiplied by a miscalibration
//! factor `c`:
//!
//! ```text
//! logit_j(a) = c · (−½‖a − μ_j‖² + ½‖a‖²) / σ² = c · (s·a_j − s²/2) / σ²
//! ```
//!
//! The `½‖a‖²` term is shared by every class and drops out of the softmax,
//! so `c = 1` is exactly calibrated and a fitted temperature should recover
//! `c`. Unknown classes sit at the midpoint of two known means plus an
//! offset orthogonal to every known mean: they look plausible to the
//! classifier and attract confident wrong predictions.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{LabelVector, LogitMatrix, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_known: usize,
    pub num_unknown: usize,
    /// Samples per known class in the training pool, and per class
    /// (known and unknown) in the test set.
    pub per_class: usize,
    pub dim: usize,
    /// Distance of each known mean from the origin.
    pub margin: f64,
    pub sigma: f64,
    /// Logit multiplier; above 1 is overconfident.
    pub scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_known: 6,
            num_unknown: 4,
            per_class: 2000,
            dim: 10,
            margin: 4.0,
            sigma: 1.0,
            scale: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.num_known < 2 {
            return fail(format!(
                "need at least 2 known classes, got {}",
                self.num_known
            ));
        }
        if self.per_class < 1 {
            return fail("per-class sample count must be positive".into());
        }
        if self.dim < self.num_known {
            return fail(format!(
                "dimension {} is below the {} known classes",
                self.dim, self.num_known
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma {} must be positive", self.sigma));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return fail(format!("scale {} must be positive", self.scale));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail(format!("margin {} must be positive", self.margin));
        }
        Ok(())
    }
}

/// Features, logits and labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplit {
    pub features: Matrix,
    pub logits: LogitMatrix,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: SynthSplit,
    /// 10% of the training pool, held out for calibration.
    pub val: SynthSplit,
    /// Known and unknown classes; unknowns carry label `K`.
    pub test: SynthSplit,
}

pub const VALIDATION_FRACTION: f64 = 0.1;

struct Generator {
    cfg: SynthConfig,
    rng: ChaCha8Rng,
}

impl Generator {
    fn known_mean(&self, j: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.cfg.dim];
        m[j] = self.cfg.margin;
        m
    }

    fn unknown_mean(&mut self) -> Vec<f64> {
        let k = self.cfg.num_known;
        let pair = index::sample(&mut self.rng, k, 2);
        let (p, q) = (pair.index(0), pair.index(1));
        let mut m = vec![0.0; self.cfg.dim];
        m[p] = 0.5 * self.cfg.margin;
        m[q] = 0.5 * self.cfg.margin;
        if self.cfg.dim > k {
            let dir: Vec<f64> = (k..self.cfg.dim)
                .map(|_| self.rng.sample(StandardNormal))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                let len = 0.5 * self.cfg.margin;
                for (slot, d) in m[k..].iter_mut().zip(dir) {
                    *slot = d / norm * len;
                }
            }
        }
        m
    }

    fn sample(&mut self, mean: &[f64], out: &mut Vec<f64>) {
        let sigma = self.cfg.sigma;
        for &mu in mean {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            out.push(mu + sigma * z);
        }
    }

    fn logits_of(&self, features: &[f64]) -> Vec<f64> {
        let SynthConfig {
            margin: s,
            sigma,
            scale,
            num_known,
            ..
        } = self.cfg;
        let var = sigma * sigma;
        let rows = features.len() / self.cfg.dim;
        let mut out = Vec::with_capacity(rows * num_known);
        for a in features.chunks_exact(self.cfg.dim) {
            out.extend(
                a[..num_known]
                    .iter()
                    .map(|&aj| scale * (s * aj - 0.5 * s * s) / var),
            );
        }
        out
    }

    fn split(&self, features: Vec<f64>, labels: Vec<usize>) -> Result<SynthSplit> {
        let n = labels.len();
        let logits = self.logits_of(&features);
        Ok(SynthSplit {
            features: Matrix::new(n, self.cfg.dim, features)?,
            logits: LogitMatrix::new(Matrix::new(n, self.cfg.num_known, logits)?)?,
            labels: LabelVector::new(labels, self.cfg.num_known)?,
        })
    }
}

/// Generates train, validation and test splits. Deterministic in the seed.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut g = Generator {
        cfg: *cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let (k, n, d) = (cfg.num_known, cfg.per_class, cfg.dim);
    let known_means: Vec<Vec<f64>> = (0..k).map(|j| g.known_mean(j)).collect();
    let unknown_means: Vec<Vec<f64>> = (0..cfg.num_unknown).map(|_| g.unknown_mean()).collect();

    // training pool, shuffled, with the last 10% held out
    let pool = n * k;
    let mut pool_feats = Vec::with_capacity(pool * d);
    let mut pool_labels = Vec::with_capacity(pool);
    for (j, mean) in known_means.iter().enumerate() {
        for _ in 0..n {
            g.sample(mean, &mut pool_feats);
            pool_labels.push(j);
        }
    }
    let mut order: Vec<usize> = (0..pool).collect();
    for i in (1..pool).rev() {
        let j = g.rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((pool as f64 * VALIDATION_FRACTION).round() as usize)
        .clamp(1, pool.saturating_sub(1).max(1));
    let n_train = pool - n_val;
    let gather = |idx: &[usize]| {
        let mut f = Vec::with_capacity(idx.len() * d);
        let mut l = Vec::with_capacity(idx.len());
        for &i in idx {
            f.extend_from_slice(&pool_feats[i * d..(i + 1) * d]);
            l.push(pool_labels[i]);
        }
        (f, l)
    };
    let (train_f, train_l) = gather(&order[..n_train]);
    let (val_f, val_l) = gather(&order[n_train..]);

    let mut test_f = Vec::with_capacity(n * (k + cfg.num_unknown) * d);
    let mut test_l = Vec::with_capacity(n * (k + cfg.num_unknown));
    for (j, mean) in known_means.iter().enumerate() {
        for _ in 0..n {
            g.sample(mean, &mut test_f);
            test_l.push(j);
        }
    }
    for mean in &unknown_means {
        for _ in 0..n {
            g.sample(mean, &mut test_f);
            test_l.push(k);
        }
    }

    Ok(SynthData {
        train: g.split(train_f, train_l)?,
        val: g.split(val_f, val_l)?,
        test: g.split(test_f, test_l)?,
    })
}

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use osrcal_core::{ArrayFormat, BrierColumns, Distance};

#[derive(Debug, Parser)]
#[command(
    name = "osrcal",
    version,
    about = "Calibration metrics for closed-set and open-set classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw known/unknown class partitions, one manifest per run.
    Split(SplitArgs),
    /// Generate synthetic train/val/test logits and labels.
    Synth(SynthArgs),
    /// Fit a temperature on validation logits.
    Calibrate(CalibrateArgs),
    /// Write probabilities and predicted labels for one method.
    Predict(PredictArgs),
    /// Brier, ECE and accuracy before and after temperature scaling.
    Evaluate(EvaluateArgs),
    /// Fold per-run reports into mean/std summaries.
    Aggregate(AggregateArgs),
    /// Render a report's reliability table as SVG.
    Diagram(DiagramArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Npy,
}

impl From<FormatArg> for ArrayFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ArrayFormat::Csv,
            FormatArg::Npy => ArrayFormat::Npy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceArg {
    Euclidean,
    Cosine,
}

impl From<DistanceArg> for Distance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Euclidean => Distance::Euclidean,
            DistanceArg::Cosine => Distance::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BrierColsArg {
    #[value(name = "k")]
    Known,
    #[value(name = "k+1")]
    All,
}

impl From<BrierColsArg> for BrierColumns {
    fn from(b: BrierColsArg) -> Self {
        match b {
            BrierColsArg::Known => BrierColumns::Known,
            BrierColsArg::All => BrierColumns::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Closed,
    Threshold,
    Openmax,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Total number of classes in the dataset.
    #[arg(long = "total", default_value_t = 10)]
    pub total: usize,
    /// Number of classes treated as known.
    #[arg(long = "known", default_value_t = 6)]
    pub known: usize,
    #[arg(long, default_value_t = 5)]
    pub runs: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "synthetic")]
    pub dataset: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Take K, N and the seed from a split manifest.
    #[arg(long, conflicts_with_all = ["known", "total", "seed"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub known: Option<usize>,
    #[arg(long)]
    pub total: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    /// Distance of each class mean from the origin, in units of sigma.
    #[arg(long, default_value_t = 4.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Miscalibration multiplier applied to the logits.
    #[arg(long, default_value_t = 3.0)]
    pub scale: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Npy)]
    pub format: FormatArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub logits: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub t_min: f64,
    #[arg(long, default_value_t = 20.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Output path for the fit JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct OpenMaxArgs {
    /// Tail size used for each Weibull fit.
    #[arg(long, default_value_t = 20)]
    pub eta: usize,
    /// Number of top-ranked classes to revise (default min(3, K)).
    #[arg(long)]
    pub alpha: Option<usize>,
    #[arg(long, value_enum, default_value_t = DistanceArg::Euclidean)]
    pub distance: DistanceArg,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("threshold_source").args(["tau", "retain_q"])))]
#[command(group(ArgGroup::new("openmax_source").args(["model", "train_logits"])))]
pub struct PredictArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub logits: PathBuf,
    /// Temperature applied to the written probabilities. Decisions always
    /// use the raw scores.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Fixed confidence threshold for the threshold method.
    #[arg(long, value_parser = unit_interval)]
    pub tau: Option<f64>,
    /// Fraction of validation samples kept as known when choosing tau.
    #[arg(long, value_parser = unit_interval, requires = "val_logits")]
    pub retain_q: Option<f64>,
    #[arg(long)]
    pub val_logits: Option<PathBuf>,
    /// Fitted OpenMax model JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "train_labels")]
    pub train_logits: Option<PathBuf>,
    #[arg(long, requires = "train_logits")]
    pub train_labels: Option<PathBuf>,
    /// Where to write the fitted OpenMax model.
    #[arg(long, requires = "train_logits")]
    pub save_model: Option<PathBuf>,
    #[command(flatten)]
    pub openmax: OpenMaxArgs,
    #[arg(long, value_enum, default_value_t = FormatArg::Npy)]
    pub format: FormatArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("temperature_source").args(["temperature", "fit"]).required(true)))]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Test logits (closed and threshold methods).
    #[arg(long, required_unless_present = "scores")]
    pub logits: Option<PathBuf>,
    /// Revised K+1 OpenMax scores.
    #[arg(long, conflicts_with = "logits")]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    /// Open-set decisions from the threshold method.
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Temperature fit JSON written by `calibrate`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u32).range(1..))]
    pub bins: u32,
    #[arg(long)]
    pub renormalize_osr: bool,
    #[arg(long, value_enum, default_value_t = BrierColsArg::All)]
    pub brier_cols: BrierColsArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Per-run report files; grouped by method and calibration condition.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagramArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

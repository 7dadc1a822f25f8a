use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use osrcal_core::calibration::{apply_temperature, fit_temperature, TemperatureFit};
use osrcal_core::dataio::{
    load_array, load_json, load_labels, load_manifest, load_report, save_array, save_json,
    save_labels, save_manifest, save_report,
};
use osrcal_core::diagram::render_reliability_svg;
use osrcal_core::evaluation::{evaluate_closed, evaluate_openmax, evaluate_threshold};
use osrcal_core::openset::{openmax_predict, threshold_predict};
use osrcal_core::protocol::{aggregate_runs, derive_seed, generate_split};
use osrcal_core::synth::{synth_generate, SynthSplit};
use osrcal_core::tensor::{argmax_labels, softmax, softmax_rows};
use osrcal_core::{
    ArrayFormat, EvalOptions, FitOptions, LabelVector, LogitMatrix, Matrix, MetricReport,
    OpenMaxConfig, OpenMaxModel, SplitSpec, SynthConfig, ThresholdRule,
};

use crate::args::{
    AggregateArgs, CalibrateArgs, DiagramArgs, EvaluateArgs, MethodArg, PredictArgs, SplitArgs,
    SynthArgs,
};
use crate::CliError;

type CmdResult = Result<(), CliError>;

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| osrcal_core::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load_logits(path: &Path) -> Result<LogitMatrix, CliError> {
    Ok(LogitMatrix::new(load_array(path)?)?)
}

fn array_path(dir: &Path, stem: &str, format: ArrayFormat) -> PathBuf {
    dir.join(format!("{stem}.{}", format.extension()))
}

pub fn split(args: SplitArgs) -> CmdResult {
    if args.runs == 0 {
        return Err(CliError::Usage("--runs must be at least 1".into()));
    }
    create_dir(&args.out_dir)?;
    for run in 0..args.runs {
        let spec = SplitSpec {
            num_total_classes: args.total,
            num_known: args.known,
            seed: args.seed,
            run_index: run,
        };
        let manifest = generate_split(&spec, &args.dataset)?;
        save_manifest(
            &manifest,
            args.out_dir.join(format!("manifest-{run:03}.json")),
        )?;
    }
    Ok(())
}

fn write_split(dir: &Path, name: &str, split: &SynthSplit, format: ArrayFormat) -> CmdResult {
    save_array(
        &split.logits,
        array_path(dir, &format!("{name}_logits"), format),
        format,
    )?;
    save_labels(
        &split.labels,
        array_path(dir, &format!("{name}_labels"), format),
        format,
    )?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let (known, total, seed) = match &args.manifest {
        Some(path) => {
            let m = load_manifest(path)?;
            (
                m.num_known(),
                m.num_total_classes,
                derive_seed(m.seed, m.run_index),
            )
        }
        None => (
            args.known.unwrap_or(6),
            args.total.unwrap_or(10),
            args.seed.unwrap_or(0),
        ),
    };
    if total < known {
        return Err(CliError::Usage(format!(
            "--total {total} is below --known {known}"
        )));
    }
    let cfg = SynthConfig {
        num_known: known,
        num_unknown: total - known,
        per_class: args.per_class,
        dim: args.dim,
        margin: args.margin,
        sigma: args.sigma,
        scale: args.scale,
        seed,
    };
    let data = synth_generate(&cfg)?;
    let format = args.format.into();
    create_dir(&args.out_dir)?;
    write_split(&args.out_dir, "train", &data.train, format)?;
    write_split(&args.out_dir, "val", &data.val, format)?;
    write_split(&args.out_dir, "test", &data.test, format)?;
    save_json(&cfg, args.out_dir.join("synth.json"))?;
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> CmdResult {
    let logits = load_logits(&args.logits)?;
    let labels = load_labels(&args.labels, logits.cols())?;
    let opts = FitOptions {
        bounds: (args.t_min, args.t_max),
        tol: args.tol,
    };
    let fit = fit_temperature(&logits, &labels, opts)?;
    save_json(&fit, &args.out)?;
    Ok(())
}

pub fn predict(args: PredictArgs) -> CmdResult {
    let logits = load_logits(&args.logits)?;
    let format: ArrayFormat = args.format.into();
    let t = args.temperature;
    let out = &args.out_dir;
    match args.method {
        MethodArg::Closed => {
            let probs = apply_temperature(&logits, t)?;
            create_dir(out)?;
            save_array(&probs, array_path(out, "closed_probs", format), format)?;
            save_labels(
                &argmax_labels(&logits),
                array_path(out, "closed_labels", format),
                format,
            )?;
        }
        MethodArg::Threshold => {
            let rule = match (args.tau, args.retain_q, &args.val_logits) {
                (Some(tau), _, _) => ThresholdRule::fixed(tau),
                (None, Some(q), Some(val)) => {
                    ThresholdRule::from_validation(&softmax(&load_logits(val)?, 1.0)?, q)?
                }
                _ => {
                    return Err(CliError::Usage(
                        "the threshold method needs --tau or --retain-q with --val-logits".into(),
                    ))
                }
            };
            let decided = threshold_predict(&softmax(&logits, 1.0)?, &rule)?;
            let probs = apply_temperature(&logits, t)?;
            create_dir(out)?;
            save_array(&probs, array_path(out, "threshold_probs", format), format)?;
            save_labels(
                &decided,
                array_path(out, "threshold_labels", format),
                format,
            )?;
            save_json(&rule, out.join("threshold.json"))?;
        }
        MethodArg::Openmax => {
            let model =
                match (&args.model, &args.train_logits, &args.train_labels) {
                    (Some(path), _, _) => {
                        let model: OpenMaxModel = load_json(path)?;
                        model.validate()?;
                        model
                    }
                    (None, Some(tl), Some(ty)) => {
                        let train = load_logits(tl)?;
                        let labels = load_labels(ty, train.cols())?;
                        let config = OpenMaxConfig {
                            eta: args.openmax.eta,
                            alpha: args.openmax.alpha,
                            distance: args.openmax.distance.into(),
                        };
                        OpenMaxModel::fit(&train, &labels, &argmax_labels(&train), config)?
                    }
                    _ => return Err(CliError::Usage(
                        "the openmax method needs --model or --train-logits with --train-labels"
                            .into(),
                    )),
                };
            let result = openmax_predict(&logits, &model)?;
            let probs = softmax_rows(&result.scores, t)?;
            create_dir(out)?;
            if let Some(path) = &args.save_model {
                save_json(&model, path)?;
            }
            save_array(
                &result.scores,
                array_path(out, "openmax_scores", format),
                format,
            )?;
            save_array(&probs, array_path(out, "openmax_probs", format), format)?;
            save_labels(
                &result.labels,
                array_path(out, "openmax_labels", format),
                format,
            )?;
        }
    }
    Ok(())
}

fn require<'a>(value: &'a Option<PathBuf>, message: &str) -> Result<&'a PathBuf, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(message.into()))
}

pub fn evaluate(args: EvaluateArgs) -> CmdResult {
    let temperature = match (args.temperature, &args.fit) {
        (Some(t), _) => t,
        (None, Some(path)) => load_json::<TemperatureFit>(path)?.temperature,
        (None, None) => return Err(CliError::Usage("--temperature or --fit is required".into())),
    };
    let opts = EvalOptions {
        num_bins: args.bins as usize,
        renormalize_osr: args.renormalize_osr,
        brier_columns: args.brier_cols.into(),
    };
    let reports = match args.method {
        MethodArg::Closed => {
            let logits = load_logits(require(&args.logits, "the closed method needs --logits")?)?;
            let labels = load_labels(&args.labels, logits.cols())?;
            evaluate_closed(&logits, &labels, temperature, &opts)?
        }
        MethodArg::Threshold => {
            let logits = load_logits(require(
                &args.logits,
                "the threshold method needs --logits",
            )?)?;
            let labels = load_labels(&args.labels, logits.cols())?;
            let predicted = load_labels(
                require(&args.predicted, "the threshold method needs --predicted")?,
                logits.cols(),
            )?;
            evaluate_threshold(&logits, &labels, &predicted, temperature, &opts)?
        }
        MethodArg::Openmax => {
            let scores: Matrix =
                load_array(require(&args.scores, "the openmax method needs --scores")?)?;
            if scores.cols() < 3 {
                return Err(osrcal_core::Error::Validation(format!(
                    "OpenMax scores need at least 3 columns, got {}",
                    scores.cols()
                ))
                .into());
            }
            let labels: LabelVector = load_labels(&args.labels, scores.cols() - 1)?;
            evaluate_openmax(&scores, &labels, temperature, &opts)?
        }
    };
    create_dir(&args.out_dir)?;
    for report in &reports {
        save_report(report, args.out_dir.join(report_file_name(report)))?;
    }
    Ok(())
}

pub fn report_file_name(report: &MetricReport) -> String {
    let condition = if report.calibrated { "after" } else { "before" };
    format!("{}-{condition}.json", report.method)
}

pub fn aggregate(args: AggregateArgs) -> CmdResult {
    let mut groups: BTreeMap<(osrcal_core::Method, bool), Vec<MetricReport>> = BTreeMap::new();
    for path in &args.reports {
        let report = load_report(path)?;
        groups
            .entry((report.method, report.calibrated))
            .or_default()
            .push(report);
    }
    create_dir(&args.out_dir)?;
    for reports in groups.values() {
        let agg = aggregate_runs(reports)?;
        save_json(&agg, args.out_dir.join(report_file_name(&reports[0])))?;
    }
    Ok(())
}

pub fn diagram(args: DiagramArgs) -> CmdResult {
    let report = load_report(&args.report)?;
    let title = args.title.unwrap_or_else(|| {
        let condition = if report.calibrated {
            "after calibration"
        } else {
            "before calibration"
        };
        format!("{} ({condition})", report.method)
    });
    let svg = render_reliability_svg(&report.bins, &title);
    fs::write(&args.out, svg).map_err(|e| osrcal_core::Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    Ok(())
}

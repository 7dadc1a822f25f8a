//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the report is always printed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use osrcal_core::calibration::{fit_temperature, nll};
use osrcal_core::dataio::{
    load_array, load_json, load_manifest, load_report, save_array, save_manifest, save_report,
    to_canonical_vec,
};
use osrcal_core::evaluation::run_experiment;
use osrcal_core::metrics::{brier_closed, brier_osr, ece, extend_osr, unknown_probability};
use osrcal_core::openset::{fit_weibull_tail, openmax_recalibrate};
use osrcal_core::protocol::{derive_seed, generate_split};
use osrcal_core::synth::synth_generate;
use osrcal_core::tensor::{argmax_row, softmax};
use osrcal_core::{
    AggregateReport, ArrayFormat, BrierColumns, Distance, ExperimentInputs, ExperimentOptions,
    FitOptions, LabelVector, LogitMatrix, Matrix, Method, MetricReport, OpenMaxModel, ProbMatrix,
    RowMode, SplitSpec, SynthConfig, WeibullTailModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64()),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn default_runs() -> Result<Vec<Vec<MetricReport>>, String> {
    (0..5)
        .map(|r| {
            let cfg = SynthConfig {
                seed: derive_seed(0, r),
                ..SynthConfig::default()
            };
            let data = synth_generate(&cfg).map_err(|e| e.to_string())?;
            let out = run_experiment(
                ExperimentInputs::from_synth(&data),
                &ExperimentOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            Ok(out.reports)
        })
        .collect()
}

fn averaged(
    runs: &[Vec<MetricReport>],
    method: Method,
    calibrated: bool,
    f: fn(&MetricReport) -> f64,
) -> f64 {
    let vals: Vec<f64> = runs
        .iter()
        .flat_map(|r| {
            r.iter()
                .filter(|m| m.method == method && m.calibrated == calibrated)
                .map(f)
        })
        .collect();
    mean(&vals)
}

fn table_ordering() -> Outcome {
    let start = Instant::now();
    let runs = default_runs()?;
    let elapsed = start.elapsed();
    let ece_of = |m, c| averaged(&runs, m, c, |r| r.ece);
    let brier_of = |m, c| averaged(&runs, m, c, |r| r.brier);
    let acc_of = |m| averaged(&runs, m, false, |r| r.accuracy);

    let closed = (
        ece_of(Method::ClosedSet, false),
        ece_of(Method::ClosedSet, true),
    );
    let open = (
        ece_of(Method::OpenSetThreshold, false),
        ece_of(Method::OpenSetThreshold, true),
    );
    let openmax = (
        ece_of(Method::OpenSetOpenMax, false),
        ece_of(Method::OpenSetOpenMax, true),
    );
    check(
        closed.0 > closed.1,
        format!("(a) closed ECE {:.4} -> {:.4}", closed.0, closed.1),
    )?;
    check(
        open.0 > open.1,
        format!("(b) open ECE {:.4} -> {:.4}", open.0, open.1),
    )?;
    check(
        openmax.0 > openmax.1,
        format!("(b) OpenMax ECE {:.4} -> {:.4}", openmax.0, openmax.1),
    )?;
    check(
        open.1 > 3.0 * closed.1,
        format!(
            "(c) open after {:.4} vs closed after {:.4}",
            open.1, closed.1
        ),
    )?;
    let (bo, bc) = (
        brier_of(Method::OpenSetThreshold, false),
        brier_of(Method::ClosedSet, false),
    );
    check(bo > bc, format!("(d) Brier open {bo:.4} vs closed {bc:.4}"))?;
    let (ao, ac) = (acc_of(Method::OpenSetThreshold), acc_of(Method::ClosedSet));
    let am = acc_of(Method::OpenSetOpenMax);
    check(
        ao < ac && am < ac,
        format!("(e) accuracy open {ao:.4} / OpenMax {am:.4} vs closed {ac:.4}"),
    )?;
    within(elapsed, 10.0)?;
    Ok(format!(
        "ECE closed {:.4}->{:.4}, open {:.4}->{:.4}, OpenMax {:.4}->{:.4}; acc {ac:.3}/{ao:.3}/{am:.3}; {:.2}s",
        closed.0,
        closed.1,
        open.0,
        open.1,
        openmax.0,
        openmax.1,
        elapsed.as_secs_f64()
    ))
}

fn temperature_recovery() -> Outcome {
    let start = Instant::now();
    let mut summary = Vec::new();
    for c in [0.5, 1.0, 3.0] {
        let mut temps = Vec::new();
        for seed in 0..5 {
            // the fit uses the 90% training split: 0.9 * 6 * 4000 = 21600 rows
            let cfg = SynthConfig {
                num_unknown: 0,
                per_class: 4000,
                scale: c,
                seed: 100 + seed,
                ..SynthConfig::default()
            };
            let data = synth_generate(&cfg).map_err(|e| e.to_string())?;
            let fit = fit_temperature(
                &data.train.logits,
                &data.train.labels,
                FitOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            temps.push(fit.temperature);
        }
        let t = mean(&temps);
        check(
            (t / c - 1.0).abs() <= 0.15,
            format!("c = {c}: mean T = {t:.4}"),
        )?;
        summary.push(format!("c={c}: T={t:.3}"));
    }
    let elapsed = start.elapsed();
    within(elapsed, 5.0)?;
    Ok(format!(
        "{}; {:.2}s",
        summary.join(", "),
        elapsed.as_secs_f64()
    ))
}

fn closed_floor() -> Outcome {
    let runs = default_runs()?;
    let after = averaged(&runs, Method::ClosedSet, true, |r| r.ece);
    check(after < 0.02, format!("closed-set ECE after = {after:.4}"))?;
    Ok(format!("closed-set ECE after = {after:.4}"))
}

fn weibull_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dist = Weibull::new(1.0, 2.0).map_err(|e| e.to_string())?;
    let samples: Vec<f64> = (0..10_000).map(|_| dist.sample(&mut rng)).collect();
    let fit = fit_weibull_tail(&samples, samples.len()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    // profile-likelihood shape equation on the raw samples
    let k = fit.shape;
    let n = samples.len() as f64;
    let sum_pow: f64 = samples.iter().map(|d| d.powf(k)).sum();
    let sum_pow_log: f64 = samples.iter().map(|d| d.powf(k) * d.ln()).sum();
    let mean_log: f64 = samples.iter().map(|d| d.ln()).sum::<f64>() / n;
    let residual = sum_pow_log / sum_pow - 1.0 / k - mean_log;

    check(
        (1.9..=2.1).contains(&fit.shape),
        format!("shape {}", fit.shape),
    )?;
    check(
        (0.98..=1.02).contains(&fit.scale),
        format!("scale {}", fit.scale),
    )?;
    check(residual.abs() < 1e-8, format!("residual {residual:e}"))?;
    within(elapsed, 1.0)?;
    Ok(format!(
        "k = {:.4}, lambda = {:.4}, |g| = {:.1e}; {:.3}s",
        fit.shape,
        fit.scale,
        residual.abs(),
        elapsed.as_secs_f64()
    ))
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..k)
                .map(|_| {
                    // occasional exact zeros and near-one-hot rows
                    if rng.random_bool(0.15) {
                        0.0
                    } else {
                        rng.random_range(0.0..1.0f64).powi(3)
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            if s == 0.0 {
                let mut one = vec![0.0; k];
                one[rng.random_range(0..k)] = 1.0;
                one
            } else {
                raw.iter().map(|v| v / s).collect()
            }
        })
        .collect()
}

fn oracle_ece(rows: &[Vec<f64>], labels: &[usize], m: usize) -> f64 {
    let n = rows.len() as f64;
    let mut total = 0.0;
    for b in 1..=m {
        let lo = (b - 1) as f64 / m as f64;
        let hi = b as f64 / m as f64;
        let (mut count, mut conf, mut hits) = (0.0, 0.0, 0.0);
        for (row, &y) in rows.iter().zip(labels) {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            let c = row[best];
            let inside = if b == 1 { c <= hi } else { c > lo && c <= hi };
            if inside {
                count += 1.0;
                conf += c;
                if best == y {
                    hits += 1.0;
                }
            }
        }
        if count > 0.0 {
            total += count / n * (hits / count - conf / count).abs();
        }
    }
    total
}

fn oracle_brier(rows: &[Vec<f64>], labels: &[usize], cols: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        for (j, p) in row.iter().take(cols).enumerate() {
            let target = if j == y { 1.0 } else { 0.0 };
            total += (p - target).powi(2);
        }
    }
    total / rows.len() as f64
}

fn oracle_extend(rows: &[Vec<f64>], renormalize: bool) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|row| {
            let mut u = 1.0;
            for &p in row {
                u *= 1.0 - p;
            }
            let mut out = row.clone();
            out.push(u);
            if renormalize {
                let s: f64 = out.iter().sum();
                for v in &mut out {
                    *v /= s;
                }
            }
            out
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let fail = |e: osrcal_core::Error| e.to_string();
    for inst in 0..100 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(2..=4);
        let rows = random_probs(&mut rng, n, k);
        let with_unknown: Vec<usize> = (0..n).map(|_| rng.random_range(0..=k)).collect();
        let known_only: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let probs = ProbMatrix::from_rows(&rows, RowMode::Stochastic).map_err(fail)?;
        let mixed = LabelVector::new(with_unknown.clone(), k).map_err(fail)?;
        let known = LabelVector::new(known_only.clone(), k).map_err(fail)?;

        let m = [5, 10, 15, 20][inst % 4];
        let mut gaps = vec![
            (ece(&probs, &mixed, m).map_err(fail)?.0 - oracle_ece(&rows, &with_unknown, m)).abs(),
            (brier_closed(&probs, &known).map_err(fail)? - oracle_brier(&rows, &known_only, k))
                .abs(),
        ];
        for renormalize in [false, true] {
            let ours = extend_osr(&probs, renormalize).map_err(fail)?;
            let expected = oracle_extend(&rows, renormalize);
            for (i, row) in expected.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    gaps.push((ours.get(i, j) - v).abs());
                }
            }
            for (columns, cols) in [(BrierColumns::Known, k), (BrierColumns::All, k + 1)] {
                let got = brier_osr(&ours, &mixed, columns).map_err(fail)?;
                gaps.push((got - oracle_brier(&expected, &with_unknown, cols)).abs());
            }
        }
        let gap = gaps.into_iter().fold(0.0, f64::max);
        worst = worst.max(gap);
        check(gap <= 1e-12, format!("instance {inst}: gap {gap:e}"))?;
    }
    Ok(format!("100 instances, max gap {worst:.1e}"))
}

fn algebraic_invariants() -> Outcome {
    let fail = |e: osrcal_core::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // argmax invariance
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| {
            let k = rng.random_range(2..=10);
            (0..k).map(|_| rng.random_range(-20.0..20.0)).collect()
        })
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let logits = LogitMatrix::from_rows(std::slice::from_ref(row)).map_err(fail)?;
        let base = argmax_row(row).map_err(fail)?.0;
        for t in [0.1, 1.0, 10.0] {
            let p = softmax(&logits, t).map_err(fail)?;
            check(
                argmax_row(p.row(0)).map_err(fail)?.0 == base,
                format!("row {i}: argmax changes at T = {t}"),
            )?;
        }
    }

    // OpenMax activation-sum conservation
    let k = 5;
    let model = OpenMaxModel {
        mavs: (0..k)
            .map(|j| (0..k).map(|i| if i == j { 6.0 } else { -1.0 }).collect())
            .collect(),
        tails: (0..k)
            .map(|j| WeibullTailModel {
                shape: 1.5 + 0.3 * j as f64,
                scale: 2.0 + j as f64,
                tail_size: 20,
            })
            .collect(),
        alpha: 3,
        eta: 20,
        distance: Distance::Euclidean,
    };
    let mut worst: f64 = 0.0;
    for i in 0..10_000 {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
        let revised = openmax_recalibrate(&v, &model).map_err(fail)?;
        let gap = (revised.iter().sum::<f64>() - v.iter().sum::<f64>()).abs();
        worst = worst.max(gap);
        check(
            gap <= 1e-12,
            format!("row {i}: activation sum drifts by {gap:e}"),
        )?;
    }

    // NLL convexity in the inverse temperature
    for set in 0..20 {
        let n = 50;
        let kk = rng.random_range(2..=6);
        let data: Vec<f64> = (0..n * kk).map(|_| rng.random_range(-8.0..8.0)).collect();
        let logits = LogitMatrix::new(Matrix::new(n, kk, data).map_err(fail)?).map_err(fail)?;
        let labels = LabelVector::new((0..n).map(|_| rng.random_range(0..kk)).collect(), kk)
            .map_err(fail)?;
        let h = 0.05;
        for step in 1..40 {
            let beta = 0.1 + 0.1 * step as f64;
            let f = |b: f64| nll(&logits, &labels, 1.0 / b);
            let second = f(beta - h).map_err(fail)? + f(beta + h).map_err(fail)?
                - 2.0 * f(beta).map_err(fail)?;
            check(
                second >= -1e-10,
                format!("set {set}: second difference {second:e} at beta {beta}"),
            )?;
        }
    }

    // unknown probability at the boundaries
    check(
        unknown_probability(&[0.0, 1.0, 0.0]).map_err(fail)? == 0.0,
        "one-hot row",
    )?;
    check(
        unknown_probability(&[0.0, 0.0, 0.0]).map_err(fail)? == 1.0,
        "all-zero row",
    )?;
    Ok(format!("argmax 3x10^4 rows, conservation max gap {worst:.1e}, 20 convex NLL sets, boundaries exact"))
}

fn determinism_and_round_trips() -> Outcome {
    let fail = |e: osrcal_core::Error| e.to_string();
    let cfg = SynthConfig {
        per_class: 300,
        seed: 11,
        ..SynthConfig::default()
    };
    let once = |cfg: &SynthConfig| -> Result<Vec<u8>, String> {
        let data = synth_generate(cfg).map_err(fail)?;
        let out = run_experiment(
            ExperimentInputs::from_synth(&data),
            &ExperimentOptions::default(),
        )
        .map_err(fail)?;
        to_canonical_vec(&out.reports).map_err(fail)
    };
    check(
        once(&cfg)? == once(&cfg)?,
        "reports differ between identical runs",
    )?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut values: Vec<f64> = (0..600)
        .map(|_| f64::from_bits(rng.random::<u64>() >> 2))
        .collect();
    values.extend([
        0.0,
        -0.0,
        f64::MIN_POSITIVE,
        5e-324,
        f64::MAX,
        -f64::MAX,
        0.1,
        1.0 / 3.0,
    ]);
    values.retain(|v| v.is_finite());
    values.truncate(600);
    let m = Matrix::new(100, 6, values).map_err(fail)?;
    let path = dir.path().join("m.npy");
    save_array(&m, &path, ArrayFormat::Npy).map_err(fail)?;
    let back = load_array(&path).map_err(fail)?;
    let bits = |x: &Matrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(
        bits(&back) == bits(&m) && back.shape() == m.shape(),
        "NPY round trip is not bit-exact",
    )?;

    let manifest = generate_split(
        &SplitSpec {
            num_total_classes: 10,
            num_known: 6,
            seed: 3,
            run_index: 2,
        },
        "synthetic",
    )
    .map_err(fail)?;
    let mpath = dir.path().join("manifest.json");
    save_manifest(&manifest, &mpath).map_err(fail)?;
    check(
        load_manifest(&mpath).map_err(fail)? == manifest,
        "manifest round trip",
    )?;

    let data = synth_generate(&cfg).map_err(fail)?;
    let out = run_experiment(
        ExperimentInputs::from_synth(&data),
        &ExperimentOptions::default(),
    )
    .map_err(fail)?;
    for (i, report) in out.reports.iter().enumerate() {
        let rpath = dir.path().join(format!("r{i}.json"));
        save_report(report, &rpath).map_err(fail)?;
        check(
            &load_report(&rpath).map_err(fail)? == report,
            format!("report {i} round trip"),
        )?;
    }
    Ok("byte-identical reports, bit-exact NPY, manifest and report round trips".into())
}

fn osrcal(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_osrcal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`osrcal {}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn cli_pipeline() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    osrcal(&["split", "--out-dir", "splits"], root)?;
    let mut reports = Vec::new();
    for r in 0..5 {
        let run = format!("run{r}");
        let p = |rest: &str| format!("{run}/{rest}");
        osrcal(
            &[
                "synth",
                "--manifest",
                &format!("splits/manifest-{r:03}.json"),
                "--out-dir",
                &p("data"),
            ],
            root,
        )?;
        osrcal(
            &[
                "calibrate",
                "--logits",
                &p("data/val_logits.npy"),
                "--labels",
                &p("data/val_labels.npy"),
                "--out",
                &p("fit.json"),
            ],
            root,
        )?;
        let test = p("data/test_logits.npy");
        let labels = p("data/test_labels.npy");
        osrcal(
            &[
                "predict",
                "--method",
                "closed",
                "--logits",
                &test,
                "--out-dir",
                &p("pred"),
            ],
            root,
        )?;
        osrcal(
            &[
                "predict",
                "--method",
                "threshold",
                "--logits",
                &test,
                "--retain-q",
                "0.95",
                "--val-logits",
                &p("data/val_logits.npy"),
                "--out-dir",
                &p("pred"),
            ],
            root,
        )?;
        osrcal(
            &[
                "predict",
                "--method",
                "openmax",
                "--logits",
                &test,
                "--train-logits",
                &p("data/train_logits.npy"),
                "--train-labels",
                &p("data/train_labels.npy"),
                "--save-model",
                &p("openmax.json"),
                "--out-dir",
                &p("pred"),
            ],
            root,
        )?;
        let fit = p("fit.json");
        let out = p("reports");
        osrcal(
            &[
                "evaluate",
                "--method",
                "closed",
                "--logits",
                &test,
                "--labels",
                &labels,
                "--fit",
                &fit,
                "--out-dir",
                &out,
            ],
            root,
        )?;
        osrcal(
            &[
                "evaluate",
                "--method",
                "threshold",
                "--logits",
                &test,
                "--labels",
                &labels,
                "--predicted",
                &p("pred/threshold_labels.npy"),
                "--fit",
                &fit,
                "--out-dir",
                &out,
            ],
            root,
        )?;
        osrcal(
            &[
                "evaluate",
                "--method",
                "openmax",
                "--scores",
                &p("pred/openmax_scores.npy"),
                "--labels",
                &labels,
                "--fit",
                &fit,
                "--out-dir",
                &out,
            ],
            root,
        )?;
        for m in Method::ALL {
            for cond in ["before", "after"] {
                reports.push(format!("{out}/{m}-{cond}.json"));
            }
        }
    }
    let mut args = vec!["aggregate", "--out-dir", "agg"];
    args.extend(reports.iter().map(String::as_str));
    osrcal(&args, root)?;
    osrcal(
        &[
            "diagram",
            "--report",
            "run0/reports/open-set-threshold-after.json",
            "--out",
            "fig.svg",
        ],
        root,
    )?;

    let mut seen = 0;
    for m in Method::ALL {
        for (cond, calibrated) in [("before", false), ("after", true)] {
            let path = root.join(format!("agg/{m}-{cond}.json"));
            let agg: AggregateReport = load_json(&path).map_err(|e| e.to_string())?;
            let in_unit = |s: &osrcal_core::Summary| {
                (0.0..=1.0).contains(&s.min) && s.min <= s.mean && s.mean <= s.max
            };
            check(
                agg.method == m
                    && agg.calibrated == calibrated
                    && agg.runs == 5
                    && in_unit(&agg.ece)
                    && in_unit(&agg.accuracy)
                    && (0.0..=2.0).contains(&agg.brier.mean)
                    && agg.temperature.is_some() == calibrated,
                format!("aggregate {m}-{cond} is malformed"),
            )?;
            seen += 1;
        }
    }
    for path in &reports {
        load_report(root.join(path)).map_err(|e| e.to_string())?;
    }
    let svg = std::fs::read_to_string(root.join("fig.svg")).map_err(|e| e.to_string())?;
    check(
        svg.starts_with("<svg") && svg.contains("class=\"diagonal\""),
        "diagram is not an SVG",
    )?;
    Ok(format!(
        "{seen} aggregate reports from 30 run reports; {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("ordinal table reproduction", table_ordering),
        ("temperature recovery", temperature_recovery),
        ("closed-set calibration floor", closed_floor),
        ("Weibull recovery", weibull_recovery),
        ("oracle equivalence", oracle_equivalence),
        ("algebraic invariants", algebraic_invariants),
        ("determinism and round trips", determinism_and_round_trips),
        ("end-to-end CLI pipeline", cli_pipeline),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

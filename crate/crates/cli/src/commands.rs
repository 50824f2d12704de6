//! The four commands. Each one writes its resolved config before doing
//! any work, fans independent trials or runs out over a worker pool, and
//! writes results in a fixed order regardless of scheduling.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use uco_core::derand::{soft_greedy, soft_iterative};
use uco_core::diff::grad_check as check_gradient;
use uco_core::misalign::{mean_of, soft_trial, toy_trial, ToyConfig, TrialReport};
use uco_core::train::{train_instance, EpochRecord, RunLabel, SoftScheme, TrainAbort, TrainConfig, TrainRun};
use uco_core::{ContinuousDecisions, FacilityProblem, Problem, QuadraticProblem, RoundingOrder, Scheme, SeedStream, SoftConfig};

use crate::config::{pipelines, problems, toy_schemes, train_schemes, GradCheckConfig, ProblemKind, ToyMisalignConfig, ToySoftConfig, TrainFlConfig};
use crate::output::{create_dir, fmt_f64, fmt_opt, write_csv, write_json, write_text};
use crate::plot::{LineChart, Series};
use crate::CliError;

/// Columns of the toy-misalign and toy-soft trial tables.
pub const TRIAL_COLUMNS: [&str; 6] = ["trial", "scheme", "temperature", "bad_count", "total_pairs", "fraction"];
/// Columns of the toy-soft per-temperature means.
pub const TOY_SUMMARY_COLUMNS: [&str; 4] = ["scheme", "temperature", "mean_bad_count", "mean_fraction"];
/// Columns of every training curve.
pub const CURVE_COLUMNS: [&str; 6] = ["epoch", "train_loss", "test_iterative", "test_greedy", "feasible_iterative", "feasible_greedy"];
/// Columns of the per-run training summary.
pub const TRAIN_SUMMARY_COLUMNS: [&str; 11] = [
    "scheme",
    "temperature",
    "records",
    "aborted",
    "initial_loss",
    "final_loss",
    "final_test_iterative",
    "final_feasible_iterative",
    "final_test_greedy",
    "final_feasible_greedy",
    "file",
];
/// Columns of the gradient-check table.
pub const GRAD_COLUMNS: [&str; 6] = ["problem", "pipeline", "temperature", "points", "max_rel_error", "passed"];

/// Finite-difference step of the gradient checks.
const FD_STEP: f64 = 1e-5;

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Runtime(format!("worker pool: {e}")))
}

#[derive(Serialize)]
struct Meta<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    outputs: Vec<Output<'a>>,
    elapsed_seconds: f64,
}

#[derive(Serialize)]
struct Output<'a> {
    file: String,
    columns: &'a [&'a str],
    rows: usize,
}

fn output<'a>(file: &str, columns: &'a [&'a str], rows: usize) -> Output<'a> {
    Output { file: file.to_string(), columns, rows }
}

fn trial_row(r: &TrialReport) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.scheme.to_string(),
        fmt_opt(r.temperature),
        r.bad_count.to_string(),
        r.total_pairs.to_string(),
        fmt_f64(r.fraction),
    ]
}

fn percent(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

pub fn toy_misalign(cfg: &ToyMisalignConfig) -> Result<(), CliError> {
    let schemes = toy_schemes(&cfg.scheme)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("toy_misalign_config.json"), cfg)?;
    let started = Instant::now();

    let toy = ToyConfig { n: cfg.n, samples: cfg.samples, steps: None };
    let root = SeedStream::new(cfg.seed);
    let tasks: Vec<(Scheme, usize)> = schemes.iter().flat_map(|&s| (0..cfg.trials).map(move |t| (s, t))).collect();
    let reports = pool(cfg.jobs)?.install(|| tasks.par_iter().map(|&(s, t)| toy_trial(&toy, s, t, root)).collect::<uco_core::Result<Vec<_>>>())?;

    let mut rows = Vec::new();
    for (i, &scheme) in schemes.iter().enumerate() {
        let block = &reports[i * cfg.trials..(i + 1) * cfg.trials];
        rows.extend(block.iter().map(trial_row));
        let (count, fraction) = mean_of(block);
        rows.push(vec!["mean".into(), scheme.to_string(), String::new(), fmt_f64(count), block[0].total_pairs.to_string(), fmt_f64(fraction)]);
        let per_trial: Vec<String> = block.iter().map(|r| percent(r.fraction)).collect();
        println!("{:<10} {}  mean {}", scheme.as_str(), per_trial.join(" "), percent(fraction));
    }
    write_csv(&cfg.out.join("toy_misalign.csv"), &TRIAL_COLUMNS, &rows)?;
    let meta = Meta {
        command: "toy-misalign",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        outputs: vec![output("toy_misalign.csv", &TRIAL_COLUMNS, rows.len())],
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out.join("toy_misalign_meta.json"), &meta)
}

pub fn toy_soft(cfg: &ToySoftConfig) -> Result<(), CliError> {
    let schemes = toy_schemes(&cfg.scheme)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("toy_soft_config.json"), cfg)?;
    let started = Instant::now();

    let toy = ToyConfig { n: cfg.n, samples: cfg.samples, steps: Some(cfg.steps) };
    let root = SeedStream::new(cfg.seed);
    let temps = &cfg.temperatures;
    let tasks: Vec<(Scheme, usize)> = schemes.iter().flat_map(|&s| (0..cfg.trials).map(move |t| (s, t))).collect();
    let per_task = pool(cfg.jobs)?.install(|| tasks.par_iter().map(|&(s, t)| soft_trial(&toy, s, temps, t, root)).collect::<uco_core::Result<Vec<_>>>())?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut series = Vec::new();
    for (i, &scheme) in schemes.iter().enumerate() {
        let trials = &per_task[i * cfg.trials..(i + 1) * cfg.trials];
        let mut points = Vec::new();
        for (j, &tau) in temps.iter().enumerate() {
            let at_tau: Vec<TrialReport> = trials.iter().map(|r| r[j].clone()).collect();
            rows.extend(at_tau.iter().map(trial_row));
            let (count, fraction) = mean_of(&at_tau);
            summary.push(vec![scheme.to_string(), fmt_f64(tau), fmt_f64(count), fmt_f64(fraction)]);
            points.push((tau, fraction));
            println!("{:<10} tau {:<8} mean {}", scheme.as_str(), fmt_f64(tau), percent(fraction));
        }
        let name = scheme.counterpart().map(|s| s.to_string()).unwrap_or_else(|| scheme.to_string());
        series.push(Series { name, points });
    }
    write_csv(&cfg.out.join("toy_soft.csv"), &TRIAL_COLUMNS, &rows)?;
    write_csv(&cfg.out.join("toy_soft_summary.csv"), &TOY_SUMMARY_COLUMNS, &summary)?;
    if cfg.plot {
        let chart = LineChart {
            title: format!("Bad pairs after soft rounding (n = {}, {} samples)", cfg.n, cfg.samples),
            x_label: "temperature τ".into(),
            y_label: "mean bad-pair fraction".into(),
            log_x: true,
            series,
        };
        write_text(&cfg.out.join("toy_soft.svg"), &chart.to_svg())?;
    }
    let meta = Meta {
        command: "toy-soft",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        outputs: vec![output("toy_soft.csv", &TRIAL_COLUMNS, rows.len()), output("toy_soft_summary.csv", &TOY_SUMMARY_COLUMNS, summary.len())],
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out.join("toy_soft_meta.json"), &meta)
}

/// File stem of one training run: `baseline` or `<scheme>_tau<τ>`.
pub fn run_stem(label: &RunLabel) -> String {
    match label.tau {
        None => "baseline".into(),
        Some(tau) => format!("{}_tau{}", label.scheme.as_str(), fmt_f64(tau)),
    }
}

fn curve_row(r: &EpochRecord) -> Vec<String> {
    vec![
        r.epoch.to_string(),
        fmt_f64(r.train_loss),
        fmt_f64(r.test_iterative),
        fmt_f64(r.test_greedy),
        r.feasible_iterative.to_string(),
        r.feasible_greedy.to_string(),
    ]
}

#[derive(Serialize)]
struct InstanceMeta {
    /// Stream the instance points were drawn from.
    seed: SeedStream,
    n: usize,
    k: usize,
    beta: f64,
    penalty: f64,
    file: &'static str,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    version: &'a str,
    label: RunLabel,
    train: TrainConfig,
    instance: &'a InstanceMeta,
    run_config: &'a TrainFlConfig,
    curve_file: Option<String>,
    records: usize,
    completed: bool,
    abort: Option<&'a TrainAbort>,
    error: Option<String>,
}

fn label_text(label: &RunLabel) -> String {
    match label.tau {
        None => "baseline".into(),
        Some(tau) => format!("τ = {}", fmt_f64(tau)),
    }
}

fn feasible_mark(f: bool) -> &'static str {
    if f {
        "feasible"
    } else {
        "infeasible"
    }
}

pub fn train_fl(cfg: &TrainFlConfig) -> Result<(), CliError> {
    let schemes = train_schemes(&cfg.scheme)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("train_fl_config.json"), cfg)?;
    let started = Instant::now();

    let instance_seed = SeedStream::new(cfg.seed).child(0);
    let problem = FacilityProblem::sample(cfg.n, cfg.k, cfg.beta, instance_seed)?;
    let instance = InstanceMeta { seed: instance_seed, n: cfg.n, k: cfg.k, beta: cfg.beta, penalty: problem.penalty(), file: "train_fl_instance.json" };
    write_text(&cfg.out.join(instance.file), &problem.to_json().ok_or_else(|| CliError::Runtime("sampled instance has no points".into()))?)?;

    let base = TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        steps: Some(cfg.steps),
        init_logit: cfg.init_logit,
        init_scale: cfg.init_scale,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let mut labels = vec![RunLabel::baseline()];
    for &scheme in &schemes {
        labels.extend(cfg.temperatures.iter().map(|&tau| RunLabel { scheme, tau: Some(tau) }));
    }
    let runs: Vec<uco_core::Result<TrainRun>> = pool(cfg.jobs)?.install(|| {
        labels
            .par_iter()
            .map(|label| {
                let t = Instant::now();
                let run = train_instance(&problem, &label.config(&base));
                eprintln!("finished {} in {:.1}s", run_stem(label), t.elapsed().as_secs_f64());
                run
            })
            .collect()
    });

    let mut summary = Vec::new();
    let mut failures = Vec::new();
    for (label, run) in labels.iter().zip(&runs) {
        let stem = run_stem(label);
        let mut meta = RunMeta {
            command: "train-fl",
            version: env!("CARGO_PKG_VERSION"),
            label: *label,
            train: label.config(&base),
            instance: &instance,
            run_config: cfg,
            curve_file: None,
            records: 0,
            completed: false,
            abort: None,
            error: None,
        };
        match run {
            Ok(run) => {
                let file = format!("train_fl_{stem}.csv");
                let rows: Vec<Vec<String>> = run.curve.records.iter().map(curve_row).collect();
                write_csv(&cfg.out.join(&file), &CURVE_COLUMNS, &rows)?;
                if let Some(a) = &run.abort {
                    eprintln!("warning: {stem} stopped at epoch {} ({}); kept {} records", a.epoch, a.reason, rows.len());
                }
                let (first, last) = (run.curve.records.first(), run.curve.records.last());
                summary.push(vec![
                    label.scheme.as_str().to_string(),
                    fmt_opt(label.tau),
                    rows.len().to_string(),
                    run.abort.is_some().to_string(),
                    fmt_opt(first.map(|r| r.train_loss)),
                    fmt_opt(last.map(|r| r.train_loss)),
                    fmt_opt(last.map(|r| r.test_iterative)),
                    last.map(|r| r.feasible_iterative.to_string()).unwrap_or_default(),
                    fmt_opt(last.map(|r| r.test_greedy)),
                    last.map(|r| r.feasible_greedy.to_string()).unwrap_or_default(),
                    file.clone(),
                ]);
                meta.curve_file = Some(file);
                meta.records = rows.len();
                meta.completed = run.abort.is_none();
                meta.abort = run.abort.as_ref();
            }
            Err(e) => {
                failures.push(format!("{stem}: {e}"));
                meta.error = Some(e.to_string());
            }
        }
        write_json(&cfg.out.join(format!("train_fl_{stem}.json")), &meta)?;
    }
    write_csv(&cfg.out.join("train_fl_summary.csv"), &TRAIN_SUMMARY_COLUMNS, &summary)?;

    let report = train_report(&labels, &runs);
    print!("{report}");
    write_text(&cfg.out.join("train_fl_report.txt"), &report)?;

    if cfg.plot {
        for &scheme in &schemes {
            let panels = train_panels(scheme, &labels, &runs, cfg);
            for (suffix, chart) in ["loss", "test"].iter().zip(panels) {
                write_text(&cfg.out.join(format!("train_fl_{}_{suffix}.svg", scheme.as_str())), &chart.to_svg())?;
            }
        }
    }
    let meta = Meta {
        command: "train-fl",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        outputs: vec![output("train_fl_summary.csv", &TRAIN_SUMMARY_COLUMNS, summary.len())],
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out.join("train_fl_meta.json"), &meta)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} run(s) failed: {}", failures.len(), failures.join("; "))))
    }
}

/// Per-run first and last losses, and the last-epoch test objectives of
/// every soft run next to the baseline's.
fn train_report(labels: &[RunLabel], runs: &[uco_core::Result<TrainRun>]) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "{:<28} {:>7} {:>12} {:>12}  status", "run", "records", "first loss", "last loss");
    for (label, run) in labels.iter().zip(runs) {
        match run {
            Ok(run) => {
                let recs = &run.curve.records;
                let status = match &run.abort {
                    None => "completed".to_string(),
                    Some(a) => format!("stopped at epoch {}", a.epoch),
                };
                let first = recs.first().map(|r| format!("{:.6}", r.train_loss)).unwrap_or_else(|| "-".into());
                let last = recs.last().map(|r| format!("{:.6}", r.train_loss)).unwrap_or_else(|| "-".into());
                let _ = writeln!(o, "{:<28} {:>7} {:>12} {:>12}  {status}", run_stem(label), recs.len(), first, last);
            }
            Err(e) => {
                let _ = writeln!(o, "{:<28} failed: {e}", run_stem(label));
            }
        }
    }
    let last_of = |run: &uco_core::Result<TrainRun>| run.as_ref().ok().and_then(|r| r.curve.records.last().cloned());
    let Some(base) = last_of(&runs[0]) else { return o };
    let _ = writeln!(o, "\nlast-epoch test objective against the baseline (lower is better)");
    let _ = writeln!(
        o,
        "{:<28} {:>12} {:>12}  baseline iterative {:.6} ({}), greedy {:.6} ({})",
        "run",
        "iterative",
        "greedy",
        base.test_iterative,
        feasible_mark(base.feasible_iterative),
        base.test_greedy,
        feasible_mark(base.feasible_greedy)
    );
    for (label, run) in labels.iter().zip(runs).skip(1) {
        if let Some(r) = last_of(run) {
            let _ = writeln!(
                o,
                "{:<28} {:>12.6} {:>12.6}  iterative {:+.6} ({}), greedy {:+.6} ({})",
                run_stem(label),
                r.test_iterative,
                r.test_greedy,
                r.test_iterative - base.test_iterative,
                feasible_mark(r.feasible_iterative),
                r.test_greedy - base.test_greedy,
                feasible_mark(r.feasible_greedy)
            );
        }
    }
    o
}

/// Training-loss and test-objective charts for one soft scheme, each with
/// the baseline and one line per temperature. The test panel uses the
/// hard rounding that matches the scheme.
fn train_panels(scheme: SoftScheme, labels: &[RunLabel], runs: &[uco_core::Result<TrainRun>], cfg: &TrainFlConfig) -> [LineChart; 2] {
    let greedy = scheme == SoftScheme::SoftGreedy;
    let mut loss = Vec::new();
    let mut test = Vec::new();
    for (label, run) in labels.iter().zip(runs) {
        if label.tau.is_some() && label.scheme != scheme {
            continue;
        }
        let recs: &[EpochRecord] = run.as_ref().map(|r| r.curve.records.as_slice()).unwrap_or(&[]);
        let name = label_text(label);
        loss.push(Series { name: name.clone(), points: recs.iter().map(|r| (r.epoch as f64, r.train_loss)).collect() });
        test.push(Series { name, points: recs.iter().map(|r| (r.epoch as f64, if greedy { r.test_greedy } else { r.test_iterative })).collect() });
    }
    let sub = format!("n = {}, k = {}, β = {}", cfg.n, cfg.k, fmt_f64(cfg.beta));
    [
        LineChart { title: format!("{}: training loss ({sub})", scheme.as_str()), x_label: "epoch".into(), y_label: "training loss".into(), log_x: false, series: loss },
        LineChart {
            title: format!("{}: test objective after {} rounding", scheme.as_str(), if greedy { "greedy" } else { "iterative" }),
            x_label: "epoch".into(),
            y_label: "test objective".into(),
            log_x: false,
            series: test,
        },
    ]
}

/// Largest relative gradient error of `pipeline` followed by the
/// surrogate at `x`.
fn gradient_error<P: Problem>(p: &P, pipeline: SoftScheme, tau: f64, steps: usize, x: &ContinuousDecisions) -> uco_core::Result<f64> {
    match pipeline {
        SoftScheme::None => check_gradient(|v| Ok(p.surrogate(v)), x, FD_STEP),
        SoftScheme::SoftIterative => {
            let order = RoundingOrder::identity(p.dimension());
            check_gradient(|v| Ok(p.surrogate(&soft_iterative(p, v, &order, tau)?)), x, FD_STEP)
        }
        SoftScheme::SoftGreedy => {
            let soft = SoftConfig::new(tau, steps)?;
            check_gradient(|v| Ok(p.surrogate(&soft_greedy(p, v, &soft)?)), x, FD_STEP)
        }
    }
}

fn problem_name(kind: ProblemKind) -> &'static str {
    match kind {
        ProblemKind::Quadratic => "quadratic",
        ProblemKind::Facility => "facility",
    }
}

/// Random decision vectors with entries in `[0.05, 0.95]`.
fn interior_points(n: usize, count: usize, seed: SeedStream) -> Vec<ContinuousDecisions> {
    use rand::Rng;
    (0..count)
        .map(|i| {
            let mut rng = seed.child(i as u64).rng();
            ContinuousDecisions::new((0..n).map(|_| rng.gen_range(0.05..0.95)).collect()).expect("interior entries")
        })
        .collect()
}

pub fn grad_check(cfg: &GradCheckConfig) -> Result<(), CliError> {
    let kinds = problems(&cfg.problem)?;
    let pipes = pipelines(&cfg.scheme)?;
    create_dir(&cfg.out)?;
    write_json(&cfg.out.join("grad_check_config.json"), cfg)?;
    let started = Instant::now();

    let root = SeedStream::new(cfg.seed);
    let quad = QuadraticProblem::sample(cfg.n, root.child(0));
    let fl = FacilityProblem::sample(cfg.n, cfg.k, cfg.beta, root.child(1))?;
    let points = interior_points(cfg.n, cfg.points, root.child(2));

    let mut checks: Vec<(ProblemKind, SoftScheme, Option<f64>)> = Vec::new();
    for &kind in &kinds {
        for &pipe in &pipes {
            match pipe {
                SoftScheme::None => checks.push((kind, pipe, None)),
                _ => checks.extend(cfg.temperatures.iter().map(|&t| (kind, pipe, Some(t)))),
            }
        }
    }
    let workers = pool(cfg.jobs)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    println!("{:<10} {:<15} {:>8} {:>7} {:>14}  result", "problem", "pipeline", "tau", "points", "max rel error");
    for &(kind, pipe, tau) in &checks {
        let t = tau.unwrap_or(1.0);
        let errors: Vec<f64> = workers.install(|| {
            points
                .par_iter()
                .map(|x| match kind {
                    ProblemKind::Quadratic => gradient_error(&quad, pipe, t, cfg.steps, x),
                    ProblemKind::Facility => gradient_error(&fl, pipe, t, cfg.steps, x),
                })
                .collect::<uco_core::Result<Vec<_>>>()
        })?;
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let passed = worst < cfg.threshold;
        if !passed {
            failed += 1;
        }
        println!(
            "{:<10} {:<15} {:>8} {:>7} {:>14.3e}  {}",
            problem_name(kind),
            pipe.as_str(),
            tau.map(fmt_f64).unwrap_or_else(|| "-".into()),
            points.len(),
            worst,
            if passed { "ok" } else { "FAIL" }
        );
        rows.push(vec![problem_name(kind).into(), pipe.as_str().into(), fmt_opt(tau), points.len().to_string(), fmt_f64(worst), passed.to_string()]);
    }
    write_csv(&cfg.out.join("grad_check.csv"), &GRAD_COLUMNS, &rows)?;
    let meta = Meta {
        command: "grad-check",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        outputs: vec![output("grad_check.csv", &GRAD_COLUMNS, rows.len())],
        elapsed_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out.join("grad_check_meta.json"), &meta)?;
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} of {} checks reached the threshold {}", rows.len(), fmt_f64(cfg.threshold))));
    }
    Ok(())
}

/// Reads a CSV written by these commands back into header and rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("reading {}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.map(|rec| rec.iter().map(String::from).collect())).collect::<Result<_, _>>().map_err(err)?;
    Ok((header, rows))
}

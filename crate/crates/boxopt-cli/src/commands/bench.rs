//! `boxopt bench`: run a named experiment family over a size list with
//! repetitions, emitting one CSV/JSON record per cell.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use boxopt::auglag::{solve, AuglagConfig};
use boxopt::lbfgsb::{minimize, SolverConfig};
use boxopt::problems::{
    build_dual_svm, build_fair_logreg, build_joint_prob, build_nnls, gen_fairness,
    gen_joint_dataset1, gen_nnls, gen_svm_blobs, load_fairness_csv, ConstraintLoss, NnlsKind,
    Regularizer,
};
use boxopt::DenseVector;

use crate::record::{summarize, write_csv, write_json, write_summary_csv, RunRecord};
use crate::{BenchFlags, CliError, Format, SolverFlags};

pub const EXPERIMENTS: &[&str] = &[
    "nnls-i",
    "nnls-ii",
    "dual-svm",
    "joint-entropy",
    "joint-gaussian",
    "fair-logistic",
    "fair-linear",
];

/// Deterministic per-cell seed: a splitmix64 round over the user seed and
/// the cell coordinates.
fn cell_seed(seed: u64, size_idx: usize, rep: usize) -> u64 {
    let mut z = seed
        .wrapping_add((size_idx as u64).wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add((rep as u64).wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Entropy-regularized problems hit the f64 resolution wall near
/// stationarity 1e-5 at desk scale; unless the user overrides the
/// tolerances, use settings that converge cleanly.
fn config_for(experiment: &str, flags: &SolverFlags) -> AuglagConfig {
    let mut cfg = flags.auglag_config();
    if experiment == "joint-entropy" {
        if flags.tol.is_none() {
            cfg.inner.tol = 3e-5;
        }
        if flags.feas_tol.is_none() {
            cfg.feas_tol = 1e-6;
        }
    }
    cfg
}

fn run_cell(
    experiment: &str,
    size: f64,
    rep: usize,
    seed: u64,
    flags: &SolverFlags,
    bench: &BenchFlags,
) -> Result<RunRecord, CliError> {
    let cfg = config_for(experiment, flags);
    let mut record = RunRecord {
        experiment: experiment.to_string(),
        n: 0,
        m: 0,
        seed,
        rep,
        time_ms: 0.0,
        outer_iters: 0,
        inner_iters_total: 0,
        f: 0.0,
        violation_inf: 0.0,
        stationarity_inf: 0.0,
        status: String::new(),
        solver_tol: cfg.inner.tol,
        feas_tol: cfg.feas_tol,
        extra_params: "{}".into(),
    };

    match experiment {
        "nnls-i" | "nnls-ii" => {
            let kind = if experiment == "nnls-i" {
                NnlsKind::I
            } else {
                NnlsKind::II
            };
            let instance = gen_nnls(kind, size, seed).map_err(CliError::from_usage)?;
            let (mut objective, bounds) = build_nnls(&instance);
            record.n = instance.a.cols();
            record.m = instance.a.rows();
            record.extra_params = format!("{{\"t\":{size}}}");
            let inner: SolverConfig = cfg.inner.clone();
            let started = Instant::now();
            let res = minimize(
                &mut objective,
                &bounds,
                &DenseVector::zeros(record.n),
                &inner,
            )
            .map_err(CliError::solver)?;
            record.time_ms = started.elapsed().as_secs_f64() * 1e3;
            record.outer_iters = 1;
            record.inner_iters_total = res.iterations;
            record.f = res.f_star;
            record.stationarity_inf = res.grad_inf_norm_on_working_set;
            record.status = res.status.to_string();
        }
        "dual-svm" => {
            let n = size as usize;
            let (points, labels) = gen_svm_blobs(n, bench.features, seed);
            let mut problem = build_dual_svm(&points, &labels, bench.gamma, bench.c)
                .map_err(CliError::from_usage)?;
            record.n = n;
            record.m = 1;
            record.extra_params = format!(
                "{{\"gamma\":{},\"c\":{},\"features\":{}}}",
                bench.gamma, bench.c, bench.features
            );
            let started = Instant::now();
            let res = solve(&mut problem, &cfg).map_err(CliError::solver)?;
            record.time_ms = started.elapsed().as_secs_f64() * 1e3;
            record.outer_iters = res.outer_iters;
            record.inner_iters_total = res.inner_iterations_total();
            record.f = res.f;
            record.violation_inf = res.violation_inf;
            record.stationarity_inf = res.kkt_stationarity_inf;
            record.status = res.status.to_string();
        }
        "joint-entropy" | "joint-gaussian" => {
            let n = size as usize;
            let reg = if experiment == "joint-entropy" {
                Regularizer::Entropy
            } else {
                Regularizer::Gaussian
            };
            let instance =
                gen_joint_dataset1(n, bench.lambda, reg).map_err(CliError::from_usage)?;
            let mut problem = build_joint_prob(&instance).map_err(CliError::from_usage)?;
            record.n = n * n;
            record.m = 2 * n;
            record.extra_params = format!(
                "{{\"lambda\":{},\"regularizer\":\"{reg}\",\"bins\":{n}}}",
                bench.lambda
            );
            let started = Instant::now();
            let res = solve(&mut problem, &cfg).map_err(CliError::solver)?;
            record.time_ms = started.elapsed().as_secs_f64() * 1e3;
            record.outer_iters = res.outer_iters;
            record.inner_iters_total = res.inner_iterations_total();
            record.f = res.f;
            record.violation_inf = res.violation_inf;
            record.stationarity_inf = res.kkt_stationarity_inf;
            record.status = res.status.to_string();
        }
        "fair-logistic" | "fair-linear" => {
            let loss = if experiment == "fair-logistic" {
                ConstraintLoss::Logistic
            } else {
                ConstraintLoss::Linear
            };
            let instance = match (&bench.csv, bench.label_col, bench.group_col) {
                (Some(path), Some(label), Some(group)) => {
                    load_fairness_csv(path, label, group, bench.lambda_reg, loss)
                        .map_err(CliError::from_usage)?
                }
                (Some(_), _, _) => {
                    return Err(CliError::usage(
                        "--csv requires --label-col and --group-col".into(),
                    ))
                }
                _ => gen_fairness(size as usize, bench.features, bench.lambda_reg, loss, seed)
                    .map_err(CliError::from_usage)?,
            };
            let mut problem = build_fair_logreg(&instance).map_err(CliError::from_usage)?;
            record.n = instance.features.cols();
            record.m = instance.features.rows();
            record.extra_params = format!(
                "{{\"lambda_reg\":{},\"constraint_loss\":\"{loss}\",\"samples\":{}}}",
                bench.lambda_reg, record.m
            );
            let started = Instant::now();
            let res = solve(&mut problem, &cfg).map_err(CliError::solver)?;
            record.time_ms = started.elapsed().as_secs_f64() * 1e3;
            record.outer_iters = res.outer_iters;
            record.inner_iters_total = res.inner_iterations_total();
            record.f = res.f;
            record.violation_inf = res.violation_inf;
            record.stationarity_inf = res.kkt_stationarity_inf;
            record.status = res.status.to_string();
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown experiment {other:?}; valid names: {}",
                EXPERIMENTS.join(", ")
            )))
        }
    }
    Ok(record)
}

pub fn run(flags: &SolverFlags, bench: &BenchFlags) -> Result<i32, CliError> {
    if !EXPERIMENTS.contains(&bench.experiment.as_str()) {
        return Err(CliError::usage(format!(
            "unknown experiment {:?}; valid names: {}",
            bench.experiment,
            EXPERIMENTS.join(", ")
        )));
    }
    if bench.reps < 1 {
        return Err(CliError::usage("--reps must be at least 1".into()));
    }
    let sizes: Vec<f64> = bench
        .sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::usage(format!("bad size {s:?} in --sizes")))
        })
        .collect::<Result<_, _>>()?;
    if sizes.iter().any(|&s| s <= 0.0) {
        return Err(CliError::usage("sizes must be positive".into()));
    }

    // Cells run (possibly in parallel) into a slot per (size, rep); output
    // order is deterministic regardless of --jobs.
    let cells: Vec<(usize, usize)> = (0..sizes.len())
        .flat_map(|i| (0..bench.reps).map(move |r| (i, r)))
        .collect();
    let slots: Mutex<Vec<Option<Result<RunRecord, CliError>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = flags.jobs.max(1).min(cells.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= cells.len() {
                    break;
                }
                let (size_idx, rep) = cells[idx];
                let seed = cell_seed(flags.seed, size_idx, rep);
                let outcome = run_cell(
                    &bench.experiment,
                    sizes[size_idx],
                    rep,
                    seed,
                    flags,
                    bench,
                );
                slots.lock().expect("bench slot lock")[idx] = Some(outcome);
            });
        }
    });

    let records: Vec<RunRecord> = slots
        .into_inner()
        .expect("bench slots")
        .into_iter()
        .map(|slot| slot.expect("every cell ran"))
        .collect::<Result<_, _>>()?;

    let exit = if records.iter().all(|r| r.status == "converged") {
        0
    } else {
        2
    };

    match (&flags.out, flags.format) {
        (Some(path), Format::Csv) => {
            let mut file = std::fs::File::create(path).map_err(|e| CliError::usage(e.to_string()))?;
            write_csv(&mut file, &records).map_err(|e| CliError::usage(e.to_string()))?;
        }
        (Some(path), Format::Json) => {
            let mut file = std::fs::File::create(path).map_err(|e| CliError::usage(e.to_string()))?;
            write_json(&mut file, &records).map_err(|e| CliError::usage(e.to_string()))?;
        }
        (None, Format::Csv) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, &records).map_err(|e| CliError::usage(e.to_string()))?;
            lock.flush().ok();
        }
        (None, Format::Json) => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_json(&mut lock, &records).map_err(|e| CliError::usage(e.to_string()))?;
            lock.flush().ok();
        }
    }

    if let Some(summary_path) = &bench.summary {
        write_summary_csv(summary_path, &summarize(&records))
            .map_err(|e| CliError::usage(e.to_string()))?;
    }

    Ok(exit)
}

//! Black-box tests of the `boxopt` binary: exit codes, output schemas,
//! determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CSV_HEADER: &str = "experiment,n,m,seed,rep,time_ms,outer_iters,inner_iters_total,f,violation_inf,stationarity_inf,status,solver_tol,feas_tol,extra_params";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boxopt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn write_simplex_model(dir: &Path) -> (PathBuf, PathBuf) {
    let model = dir.join("model.txt");
    std::fs::write(
        &model,
        "parameters\n  Matrix A\n  Vector b\nvariables\n  Vector x \nmin \n  norm2(A*x-b)\nst\n  sum(x) == 1\n  x >= 0\n",
    )
    .unwrap();
    std::fs::write(dir.join("A.csv"), "1,0\n0,1\n").unwrap();
    std::fs::write(dir.join("b.csv"), "2\n0\n").unwrap();
    let manifest = dir.join("data.json");
    std::fs::write(&manifest, r#"{"A": "A.csv", "b": "b.csv"}"#).unwrap();
    (model, manifest)
}

#[test]
fn solve_simplex_model_converges_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = write_simplex_model(dir.path());
    let out = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
        "--tol",
        "1e-9",
        "--feas-tol",
        "1e-9",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["status"], "converged");
    let x = json["x"].as_array().unwrap();
    assert!((x[0].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    assert!(x[1].as_f64().unwrap().abs() <= 1e-6);
}

#[test]
fn malformed_model_exits_one_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("broken.txt");
    std::fs::write(&model, "variables\n  Vector x\nst\n  x >= 0\n").unwrap();
    let manifest = dir.path().join("data.json");
    std::fs::write(&manifest, "{}").unwrap();
    let out = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("parse error at 3:1"), "{err}");
    assert!(err.contains("min"), "{err}");
    assert!(stdout(&out).is_empty(), "stdout must stay machine-readable");
}

#[test]
fn missing_parameter_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (model, _) = write_simplex_model(dir.path());
    let partial = dir.path().join("partial.json");
    std::fs::write(&partial, r#"{"A": "A.csv"}"#).unwrap();
    let out = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--data",
        partial.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unbound parameter: b"), "{}", stderr(&out));
}

#[test]
fn unknown_experiment_lists_valid_names() {
    let out = run(&["bench", "--experiment", "nope", "--sizes", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for name in [
        "nnls-i",
        "nnls-ii",
        "dual-svm",
        "joint-entropy",
        "joint-gaussian",
        "fair-logistic",
        "fair-linear",
    ] {
        assert!(err.contains(name), "missing {name} in: {err}");
    }
}

#[test]
fn unknown_flag_is_rejected() {
    let out = run(&["bench", "--experiment", "nnls-i", "--sizes", "0.01", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_csv_has_the_pinned_header() {
    let out = run(&[
        "bench",
        "--experiment",
        "nnls-i",
        "--sizes",
        "0.01",
        "--reps",
        "1",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let header = text.lines().next().unwrap();
    assert_eq!(header, CSV_HEADER);
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn bench_is_deterministic_up_to_wall_time() {
    let args = [
        "bench",
        "--experiment",
        "nnls-ii",
        "--sizes",
        "0.004,0.008",
        "--reps",
        "2",
        "--seed",
        "11",
    ];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(b.status.code(), Some(0));
    let strip_time = |text: &str| -> Vec<String> {
        text.lines()
            .map(|line| {
                let cells: Vec<&str> = line.split(',').collect();
                cells
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != 5) // time_ms column
                    .map(|(_, c)| *c)
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    assert_eq!(strip_time(&stdout(&a)), strip_time(&stdout(&b)));
}

#[test]
fn bench_jobs_parallelism_keeps_row_order() {
    let base = [
        "bench",
        "--experiment",
        "nnls-i",
        "--sizes",
        "0.01,0.02",
        "--reps",
        "2",
        "--seed",
        "5",
    ];
    let serial = run(&base);
    let mut parallel_args: Vec<&str> = base.to_vec();
    parallel_args.extend_from_slice(&["--jobs", "4"]);
    let parallel = run(&parallel_args);
    let strip_time = |text: &str| -> Vec<String> {
        text.lines()
            .map(|line| {
                line.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 5)
                    .map(|(_, c)| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect()
    };
    assert_eq!(strip_time(&stdout(&serial)), strip_time(&stdout(&parallel)));
}

#[test]
fn dual_svm_rows_carry_gamma_and_c() {
    let out = run(&[
        "bench",
        "--experiment",
        "dual-svm",
        "--sizes",
        "24",
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let row = text.lines().nth(1).unwrap();
    assert!(row.contains("\"\"gamma\"\":1"), "{row}");
    assert!(row.contains("\"\"c\"\":1"), "{row}");
}

#[test]
fn bench_json_format_parses() {
    let out = run(&[
        "bench",
        "--experiment",
        "fair-linear",
        "--sizes",
        "30",
        "--seed",
        "4",
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rows = json.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["experiment"], "fair-linear");
    assert_eq!(rows[0]["status"], "converged");
}

#[test]
fn bench_summary_writes_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.csv");
    let csv_out = dir.path().join("rows.csv");
    let out = run(&[
        "bench",
        "--experiment",
        "nnls-i",
        "--sizes",
        "0.01",
        "--reps",
        "3",
        "--seed",
        "9",
        "--out",
        csv_out.to_str().unwrap(),
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let rows = std::fs::read_to_string(&csv_out).unwrap();
    assert_eq!(rows.lines().count(), 4);
    let agg = std::fs::read_to_string(&summary).unwrap();
    assert!(agg.lines().count() == 2, "{agg}");
    assert!(agg.contains("mean_time_ms"), "{agg}");
    let data_line = agg.lines().nth(1).unwrap();
    assert!(data_line.contains("nnls-i"), "{data_line}");
    let std_cell: f64 = data_line.split(',').nth(4).unwrap().parse().unwrap();
    assert!(std_cell.is_finite());
}

#[test]
fn solve_that_cannot_converge_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (model, manifest) = write_simplex_model(dir.path());
    let out = run(&[
        "solve",
        "--model",
        model.to_str().unwrap(),
        "--data",
        manifest.to_str().unwrap(),
        "--max-iters",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["status"], "max-outer");
}

#[test]
fn bench_requires_at_least_one_rep() {
    let out = run(&[
        "bench",
        "--experiment",
        "nnls-i",
        "--sizes",
        "0.01",
        "--reps",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--reps"), "{}", stderr(&out));
}

#[test]
fn check_subcommands_pass() {
    for target in ["working-set", "two-loop"] {
        let out = run(&["check", target, "--seed", "1"]);
        assert_eq!(out.status.code(), Some(0), "{target}: {}", stderr(&out));
        let text = stdout(&out);
        assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
    }
}

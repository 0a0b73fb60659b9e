//! `boxopt solve`: run a model file against bound data.

use std::path::Path;

use boxopt::auglag::{solve, AuglagStatus};
use boxopt::modeling;
use serde_json::json;

use crate::{CliError, SolverFlags};

pub fn run(model_path: &Path, data_path: &Path, flags: &SolverFlags) -> Result<i32, CliError> {
    let source = std::fs::read_to_string(model_path)
        .map_err(|e| CliError::usage(format!("{}: {e}", model_path.display())))?;
    let ast = modeling::parse(&source)
        .map_err(|e| CliError::usage(format!("{}: {e}", model_path.display())))?;
    let bindings = modeling::load_bindings(data_path).map_err(CliError::from_usage)?;
    let (model, mut problem) =
        modeling::compile(&ast, &bindings).map_err(CliError::from_usage)?;

    let cfg = flags.auglag_config();
    let started = std::time::Instant::now();
    let res = solve(&mut problem, &cfg).map_err(CliError::solver)?;
    let time_ms = started.elapsed().as_secs_f64() * 1e3;

    // Machine-readable result only on stdout.
    let x_field = if res.x.len() <= 100 {
        json!(res.x.as_slice())
    } else {
        let head: Vec<f64> = res.x.iter().take(10).copied().collect();
        json!({
            "len": res.x.len(),
            "min": res.x.iter().cloned().fold(f64::INFINITY, f64::min),
            "max": res.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "norm2": res.x.norm2(),
            "head": head,
        })
    };
    let variables: Vec<serde_json::Value> = model
        .variables()
        .iter()
        .map(|v| json!({"name": v.name, "offset": v.offset, "rows": v.shape.rows, "cols": v.shape.cols}))
        .collect();
    let out = json!({
        "status": res.status.to_string(),
        "f": res.f,
        "violation_inf": res.violation_inf,
        "stationarity_inf": res.kkt_stationarity_inf,
        "outer_iters": res.outer_iters,
        "inner_iters_total": res.inner_iterations_total(),
        "time_ms": time_ms,
        "x": x_field,
        "variables": variables,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));

    Ok(match res.status {
        AuglagStatus::Converged => 0,
        AuglagStatus::MaxOuter => 2,
        AuglagStatus::InnerFailure => 3,
    })
}

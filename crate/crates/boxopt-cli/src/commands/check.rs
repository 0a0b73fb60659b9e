//! `boxopt check`: run the oracle verification suites.

use boxopt::verify::{self, CheckReport};

use crate::CliError;

pub const TARGETS: &[&str] = &["gradients", "two-loop", "sinkhorn", "working-set", "all"];

fn run_target(target: &str, seed: u64) -> Result<CheckReport, CliError> {
    let report = match target {
        "gradients" => verify::check_gradients(seed),
        "two-loop" => verify::check_two_loop(seed, 100, 8, 4),
        "sinkhorn" => verify::check_sinkhorn(seed),
        "working-set" => verify::check_working_set(seed, 200, 32),
        other => {
            return Err(CliError::usage(format!(
                "unknown check target {other:?}; valid targets: {}",
                TARGETS.join(", ")
            )))
        }
    };
    report.map_err(CliError::solver)
}

pub fn run(target: &str, seed: u64) -> Result<i32, CliError> {
    let targets: Vec<&str> = if target == "all" {
        vec!["working-set", "two-loop", "gradients", "sinkhorn"]
    } else {
        vec![target]
    };

    let mut all_ok = true;
    for t in targets {
        let report = run_target(t, seed)?;
        for case in &report.cases {
            // One machine-readable line per case on stdout.
            println!(
                "{},{},{:.6e},{:.1e}",
                if case.passed() { "PASS" } else { "FAIL" },
                case.name,
                case.metric,
                case.threshold
            );
        }
        for failure in report.failures() {
            all_ok = false;
            eprintln!(
                "check failure: {} observed {:.6e}, expected <= {:.1e}",
                failure.name, failure.metric, failure.threshold
            );
        }
    }
    Ok(if all_ok { 0 } else { 4 })
}

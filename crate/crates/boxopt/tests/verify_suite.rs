//! The user-facing verification suite must itself pass.

use boxopt::verify;

#[test]
fn gradient_checks_all_pass() {
    let report = verify::check_gradients(2024).unwrap();
    assert!(report.cases.len() >= 10, "expected a broad gradient sweep");
    for case in &report.cases {
        assert!(
            case.passed(),
            "{}: metric {:.3e} exceeds {:.1e}",
            case.name,
            case.metric,
            case.threshold
        );
    }
}

#[test]
fn reports_expose_failures() {
    // A report with an out-of-tolerance case must say so.
    let mut report = verify::CheckReport::default();
    report.cases.push(verify::CheckCase {
        name: "synthetic".into(),
        metric: 1.0,
        threshold: 1e-6,
    });
    assert!(!report.all_passed());
    assert_eq!(report.failures().count(), 1);
}

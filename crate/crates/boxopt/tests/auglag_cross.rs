//! Augmented-Lagrangian integration: cross-solver agreement on the
//! entropic transport problem and KKT quality on the convex suite.

use boxopt::auglag::{kkt_residuals, solve, AuglagConfig, AuglagStatus};
use boxopt::problems::{
    build_dual_svm, build_joint_prob, gen_joint_dataset1, gen_joint_dataset2, gen_svm_blobs,
    sinkhorn, Regularizer,
};
use boxopt::verify;
use boxopt::DenseVector;

// Entropic objectives place the f64 resolution wall near stationarity
// 1e-5 at these sizes; the feasibility loop tightens well past that.
fn tight_cfg() -> AuglagConfig {
    let mut cfg = AuglagConfig::default();
    cfg.feas_tol = 1e-6;
    cfg.inner.tol = 1e-5;
    cfg.inner.max_iters = 20_000;
    cfg
}

#[test]
fn entropic_joint_prob_matches_sinkhorn_10x10() {
    let instance = gen_joint_dataset1(10, 0.5, Regularizer::Entropy).unwrap();
    let cmp = verify::sinkhorn_cross_check(&instance, &tight_cfg(), 1e-12).unwrap();
    assert_eq!(cmp.solver_status, AuglagStatus::Converged);
    assert!(
        cmp.marginal_residual <= 1e-6,
        "marginal residual {}",
        cmp.marginal_residual
    );
    assert!(
        cmp.objective_rel_diff <= 1e-5,
        "objective gap {}",
        cmp.objective_rel_diff
    );
}

#[test]
fn entropic_random_cost_cross_check_via_verify() {
    let report = verify::check_sinkhorn(3).unwrap();
    assert!(report.all_passed(), "{:?}", report.cases);
}

#[test]
fn gaussian_regularizer_solves_dataset2() {
    let instance = gen_joint_dataset2(5, 0.5, Regularizer::Gaussian, 9).unwrap();
    let mut problem = build_joint_prob(&instance).unwrap();
    let cfg = tight_cfg();
    let res = solve(&mut problem, &cfg).unwrap();
    assert_eq!(res.status, AuglagStatus::Converged);
    assert!(res.violation_inf <= cfg.feas_tol);
    assert!(res.x.iter().all(|&p| p >= 0.0));

    // Row and column sums reproduce the marginals.
    let (m, n) = (instance.rows(), instance.cols());
    for i in 0..m {
        let s: f64 = (0..n).map(|j| res.x[j * m + i]).sum();
        assert!((s - instance.u[i]).abs() <= 1e-6);
    }
}

#[test]
fn sinkhorn_plan_is_feasible_for_the_solver_problem() {
    // The Sinkhorn output pushed through the problem's own constraint
    // callbacks shows near-zero violation: the two formulations agree on
    // what "feasible" means.
    let instance = gen_joint_dataset1(8, 0.5, Regularizer::Entropy).unwrap();
    let plan = sinkhorn(&instance.u, &instance.v, &instance.cost, 0.5, 1e-12, 100_000).unwrap();
    let mut problem = build_joint_prob(&instance).unwrap();
    let (m, n) = (instance.rows(), instance.cols());
    let flat = DenseVector::from_fn(m * n, |idx| plan.get(idx % m, idx / m));
    let h = problem.eq.as_mut().unwrap().eval(&flat).unwrap();
    assert!(h.inf_norm() <= 1e-11, "violation {}", h.inf_norm());
}

#[test]
fn kkt_residuals_small_on_convex_suite() {
    let cfg = tight_cfg();

    // Dual SVM on a small blob data set.
    {
        let (points, labels) = gen_svm_blobs(40, 2, 13);
        let mut problem = build_dual_svm(&points, &labels, 1.0, 1.0).unwrap();
        let res = solve(&mut problem, &cfg).unwrap();
        assert_eq!(res.status, AuglagStatus::Converged);
        let (stat, viol, comp) =
            kkt_residuals(&mut problem, &res.x, &res.multipliers, cfg.inner.eps_active).unwrap();
        assert!(stat <= 10.0 * cfg.feas_tol, "svm stationarity {stat}");
        assert!(viol <= 10.0 * cfg.feas_tol, "svm violation {viol}");
        assert!(comp <= 10.0 * cfg.feas_tol, "svm complementarity {comp}");
    }

    // Entropic joint probability.
    {
        let instance = gen_joint_dataset1(6, 0.5, Regularizer::Entropy).unwrap();
        let mut problem = build_joint_prob(&instance).unwrap();
        let res = solve(&mut problem, &cfg).unwrap();
        assert_eq!(res.status, AuglagStatus::Converged);
        let (stat, viol, comp) =
            kkt_residuals(&mut problem, &res.x, &res.multipliers, cfg.inner.eps_active).unwrap();
        assert!(stat <= 10.0 * cfg.feas_tol, "joint stationarity {stat}");
        assert!(viol <= 10.0 * cfg.feas_tol, "joint violation {viol}");
        assert!(comp <= 10.0 * cfg.feas_tol, "joint complementarity {comp}");
    }
}

#[test]
fn rho_never_decreases_and_respects_cap() {
    let instance = gen_joint_dataset1(5, 0.5, Regularizer::Gaussian).unwrap();
    let mut problem = build_joint_prob(&instance).unwrap();
    let mut cfg = AuglagConfig::default();
    cfg.rho_cap = 8.0;
    let res = solve(&mut problem, &cfg).unwrap();
    assert!(res.multipliers.rho >= cfg.rho0);
    assert!(res.multipliers.rho <= cfg.rho_cap);
    assert!(res.multipliers.mu.iter().all(|&m| m >= 0.0));
}

//! Solver-level oracle cross-checks: working set vs scalar loop, two-loop
//! vs dense inverse-BFGS, the box solver vs projected gradient, and the
//! invariants of the outer iteration.

use boxopt::kernels::{clip_to_box, dot, sub};
use boxopt::lbfgsb::{
    compute_working_set, minimize, minimize_observed, two_loop_direction, CurvaturePair,
    HistoryBuffer, SolverConfig, SolverStatus,
};
use boxopt::problems::{
    build_nnls, gen_nnls, projected_gradient, seeded_rng, NnlsKind, StepRule,
};
use boxopt::verify;
use boxopt::{BoxBounds, DenseVector, IndexSet};
use rand::Rng;
use rand_distr::StandardNormal;

#[test]
fn working_set_matches_scalar_reference() {
    let report = verify::check_working_set(7, 200, 32).unwrap();
    assert!(report.all_passed(), "{:?}", report.cases);
}

#[test]
fn two_loop_matches_dense_reconstruction() {
    let report = verify::check_two_loop(11, 120, 8, 4).unwrap();
    assert!(report.all_passed(), "{:?}", report.cases);
}

#[test]
fn screened_pair_never_influences_direction() {
    // A pair failing the curvature screen must leave the output bitwise
    // identical to the same history without it.
    let mut rng = seeded_rng(23);
    for _ in 0..50 {
        let n = 6;
        let s_set = IndexSet::from_fn(n, |_| rng.gen::<f64>() < 0.8);
        let grad = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));

        let good = CurvaturePair {
            s: DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal)),
            y: DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal)),
        };
        // Flip y so the masked curvature is non-positive.
        let bad_s = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let bad_y = DenseVector::from_fn(n, |i| -bad_s[i]);
        let bad = CurvaturePair { s: bad_s, y: bad_y };

        let mut with_bad = HistoryBuffer::new(4);
        with_bad.push(good.clone());
        with_bad.push(bad);
        let mut without = HistoryBuffer::new(4);
        without.push(good);

        let a = two_loop_direction(&grad, &with_bad, &s_set, 1e-9).unwrap();
        let b = two_loop_direction(&grad, &without, &s_set, 1e-9).unwrap();
        for i in 0..n {
            assert_eq!(a[i].to_bits(), b[i].to_bits(), "coordinate {i}");
        }
    }
}

#[test]
fn two_loop_direction_is_descent_on_working_set() {
    let mut rng = seeded_rng(31);
    for _ in 0..200 {
        let n = 10;
        let s_set = IndexSet::from_fn(n, |i| i == 0 || rng.gen::<f64>() < 0.7);
        let grad = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let mut history = HistoryBuffer::new(5);
        for _ in 0..3 {
            let s = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            let y = DenseVector::from_fn(n, |i| {
                (0.3 + rng.gen::<f64>()) * s[i] + 0.05 * rng.sample::<f64, _>(StandardNormal)
            });
            history.push(CurvaturePair { s, y });
        }
        let d = two_loop_direction(&grad, &history, &s_set, 1e-9).unwrap();
        let descent = boxopt::kernels::masked_dot(&grad, &d, &s_set).unwrap();
        if d.inf_norm() > 0.0 {
            assert!(descent < 0.0, "direction must descend on the working set");
        }
        // Complement exactly zero.
        for i in 0..n {
            if !s_set.contains(i) {
                assert_eq!(d[i], 0.0);
            }
        }
    }
}

#[test]
fn box_solver_matches_projected_gradient_on_random_nnls() {
    // A 30 x 50: singular Gram, bound-active solution.
    let mut rng = seeded_rng(5);
    let a = boxopt::DenseMatrix::from_fn(30, 50, |_, _| rng.gen::<f64>() - 0.3);
    let x_true = DenseVector::from_fn(50, |_| {
        if rng.gen::<f64>() < 0.2 {
            rng.sample::<f64, _>(StandardNormal).abs()
        } else {
            0.0
        }
    });
    let noise = DenseVector::from_fn(30, |_| rng.sample::<f64, _>(StandardNormal));
    let b = boxopt::kernels::add_scaled(
        &boxopt::kernels::matvec(&a, &x_true, false).unwrap(),
        &noise,
        0.01,
    );
    let instance = boxopt::problems::NnlsInstance { a, b, x_true };

    let (mut objective, bounds) = build_nnls(&instance);
    // f* is ~3e-3 here, which puts the f64 certification wall for the
    // working-set gradient near 1e-8.
    let cfg = SolverConfig {
        tol: 1e-8,
        ..SolverConfig::default()
    };
    let res = minimize(&mut objective, &bounds, &DenseVector::zeros(50), &cfg).unwrap();
    assert_eq!(res.status, SolverStatus::Converged);

    let (mut oracle_obj, _) = build_nnls(&instance);
    let x_pg = projected_gradient(
        &mut oracle_obj,
        &bounds,
        &DenseVector::zeros(50),
        1_000_000,
        StepRule::BarzilaiBorwein,
    )
    .unwrap();

    let (mut f_obj, _) = build_nnls(&instance);
    let (f_solver, _) = boxopt::lbfgsb::Objective::value_grad(&mut f_obj, &res.x_star).unwrap();
    let (f_pg, _) = boxopt::lbfgsb::Objective::value_grad(&mut f_obj, &x_pg).unwrap();
    let rel = (f_solver - f_pg).abs() / f_pg.abs().max(1e-300);
    assert!(
        rel <= 1e-6,
        "objective mismatch: solver {f_solver} vs projected gradient {f_pg} (rel {rel:.3e})"
    );
}

#[test]
fn iterates_stay_feasible_and_monotone_across_random_boxes() {
    let mut rng = seeded_rng(17);
    for trial in 0..20 {
        let n = 12;
        let lower = DenseVector::from_fn(n, |_| {
            if rng.gen::<f64>() < 0.3 {
                f64::NEG_INFINITY
            } else {
                -1.0 - rng.gen::<f64>()
            }
        });
        let upper = DenseVector::from_fn(n, |i| {
            if rng.gen::<f64>() < 0.3 {
                f64::INFINITY
            } else {
                lower[i].max(-2.0) + 0.5 + rng.gen::<f64>()
            }
        });
        let bounds = BoxBounds::new(lower, upper).unwrap();
        let center = DenseVector::from_fn(n, |_| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let scales = DenseVector::from_fn(n, |_| 0.5 + 4.0 * rng.gen::<f64>());
        let mut oracle = |x: &DenseVector| {
            let f: f64 = (0..n)
                .map(|i| 0.5 * scales[i] * (x[i] - center[i]).powi(2))
                .sum();
            let g = DenseVector::from_fn(n, |i| scales[i] * (x[i] - center[i]));
            (f, g)
        };
        let x0 = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let cfg = SolverConfig::default();
        let mut last_f = f64::INFINITY;
        let res = minimize_observed(&mut oracle, &bounds, &x0, &cfg, &mut |rec| {
            assert!(
                bounds.contains(rec.x),
                "trial {trial}: iterate {} left the box",
                rec.iteration
            );
            assert!(
                rec.f <= last_f,
                "trial {trial}: objective rose at iteration {}",
                rec.iteration
            );
            last_f = rec.f;
        })
        .unwrap();
        assert_eq!(res.status, SolverStatus::Converged, "trial {trial}");
        assert!(res.grad_inf_norm_on_working_set <= cfg.tol);
        assert!(bounds.contains(&res.x_star));
    }
}

#[test]
fn truncated_moves_are_never_longer_than_the_raw_direction() {
    let mut rng = seeded_rng(41);
    for _ in 0..500 {
        let n = 16;
        let bounds = BoxBounds::uniform(n, -1.0, 1.0).unwrap();
        let x = clip_to_box(
            &DenseVector::from_fn(n, |_| 2.4 * rng.gen::<f64>() - 1.2),
            &bounds,
        )
        .unwrap();
        let grad = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let eps = 1e-3;
        let s = compute_working_set(&x, &grad, &bounds, eps).unwrap();
        // Quasi-Newton-like direction: negative gradient through a random
        // SPD diagonal-plus-rank-one map, zero off the working set.
        let diag = DenseVector::from_fn(n, |_| 0.2 + rng.gen::<f64>());
        let u = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let masked_grad = boxopt::kernels::apply_mask(&grad, &s);
        let masked_u = boxopt::kernels::apply_mask(&u, &s);
        let coef = dot(&masked_u, &masked_grad);
        let d = DenseVector::from_fn(n, |i| {
            if s.contains(i) {
                -(diag[i] * masked_grad[i] + 0.2 * coef * masked_u[i])
            } else {
                0.0
            }
        });
        if dot(&grad, &d) >= 0.0 {
            continue;
        }
        let (p, branch) =
            boxopt::lbfgsb::project_direction(&x, &grad, &d, &bounds, eps).unwrap();
        assert!(dot(&p, &grad) <= 1e-12);
        if branch == boxopt::lbfgsb::ProjectionBranch::Truncated {
            let shrink = sub(&p, &d);
            // Zeroing coordinates can only shorten the step.
            assert!(p.norm2() <= d.norm2() + 1e-15);
            for i in 0..n {
                assert!(shrink[i] == 0.0 || p[i] == 0.0);
            }
        }
    }
}

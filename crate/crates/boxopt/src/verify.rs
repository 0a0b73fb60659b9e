//! Oracle cross-checks.
//!
//! Each check pits a piece of the solver against an independent reference:
//! the working set against a per-coordinate scalar loop, the two-loop
//! recursion against an explicitly materialized dense inverse-BFGS
//! recursion, analytic gradients against central finite differences, and
//! the entropic joint-probability solve against Sinkhorn scaling. The
//! references here deliberately do not share code with the implementation
//! paths they audit.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::auglag::{self, AuglagConfig, AuglagStatus, ConstrainedProblem, Multipliers};
use crate::error::Result;
use crate::kernels::{BoxBounds, DenseMatrix, DenseVector, IndexSet};
use crate::lbfgsb::{self, CurvaturePair, HistoryBuffer};
use crate::modeling;
use crate::problems::{self, seeded_rng, ConstraintLoss, Regularizer};

/// One oracle comparison: the observed metric and its threshold.
#[derive(Debug, Clone)]
pub struct CheckCase {
    pub name: String,
    /// Observed discrepancy (smaller is better).
    pub metric: f64,
    pub threshold: f64,
}

impl CheckCase {
    pub fn passed(&self) -> bool {
        self.metric.is_finite() && self.metric <= self.threshold
    }
}

/// A batch of comparisons from one check family.
#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub cases: Vec<CheckCase>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(CheckCase::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckCase> {
        self.cases.iter().filter(|c| !c.passed())
    }

    fn push(&mut self, name: impl Into<String>, metric: f64, threshold: f64) {
        self.cases.push(CheckCase {
            name: name.into(),
            metric,
            threshold,
        });
    }
}

/// Scalar-loop membership oracle for the working set: coordinate by
/// coordinate, no vector kernels involved.
pub fn working_set_reference(
    x: &DenseVector,
    grad: &DenseVector,
    bounds: &BoxBounds,
    eps: f64,
) -> IndexSet {
    let mut mask = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let at_lower = x[i] <= bounds.lower()[i] + eps && grad[i] >= 0.0;
        let at_upper = x[i] >= bounds.upper()[i] - eps && grad[i] <= 0.0;
        mask.push(!(at_lower || at_upper));
    }
    IndexSet::new(mask)
}

/// Compares the componentwise working-set kernel against the scalar loop
/// on `cases` random instances of dimension `n`. The metric per case is 0
/// on exact agreement, 1 otherwise.
pub fn check_working_set(seed: u64, cases: usize, n: usize) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed);
    let mut report = CheckReport::default();
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let lower = DenseVector::from_fn(n, |_| {
            if rng.gen::<f64>() < 0.2 {
                f64::NEG_INFINITY
            } else {
                rng.gen::<f64>() - 1.2
            }
        });
        let upper = DenseVector::from_fn(n, |i| {
            if rng.gen::<f64>() < 0.2 {
                f64::INFINITY
            } else {
                lower[i].max(-1.0) + 0.2 + rng.gen::<f64>()
            }
        });
        let bounds = BoxBounds::new(lower, upper)?;
        let raw = DenseVector::from_fn(n, |_| 2.0 * rng.gen::<f64>() - 1.0);
        let x = crate::kernels::clip_to_box(&raw, &bounds)?;
        let grad = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let eps = 0.05 * rng.gen::<f64>();
        let fast = lbfgsb::compute_working_set(&x, &grad, &bounds, eps)?;
        let slow = working_set_reference(&x, &grad, &bounds, eps);
        if fast != slow {
            mismatches += 1;
        }
    }
    report.push(
        format!("working-set scalar-loop agreement ({cases} instances, n={n})"),
        mismatches as f64,
        0.0,
    );
    Ok(report)
}

/// Dense inverse-BFGS oracle: materializes the inverse Hessian restricted
/// to the working set by the textbook recursion and applies it to the
/// negative gradient. Independent of the two-loop implementation.
pub fn dense_bfgs_direction(
    grad: &DenseVector,
    history: &HistoryBuffer,
    s_set: &IndexSet,
    eps: f64,
) -> DenseVector {
    let members: Vec<usize> = s_set.members().collect();
    let k = members.len();
    let gather = |v: &DenseVector| -> Vec<f64> { members.iter().map(|&i| v[i]).collect() };

    // Screen exactly as specified: <s[S], y[S]> > eps ||y[S]||^2.
    let mut participating: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for pair in history.iter() {
        let s = gather(&pair.s);
        let y = gather(&pair.y);
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > eps * yy {
            participating.push((s, y, sy));
        }
    }

    let mut d = DenseVector::zeros(grad.len());
    if participating.is_empty() {
        for &i in &members {
            d[i] = -grad[i];
        }
        return d;
    }

    let (_, y_new, sy_new) = participating.last().unwrap();
    let gamma = sy_new / y_new.iter().map(|v| v * v).sum::<f64>();
    let mut h = vec![vec![0.0; k]; k];
    for (i, row) in h.iter_mut().enumerate() {
        row[i] = gamma;
    }

    // H <- (I - rho s y') H (I - rho y s') + rho s s', oldest to newest.
    for (s, y, sy) in &participating {
        let rho = 1.0 / sy;
        let mut v = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                let delta = if i == j { 1.0 } else { 0.0 };
                v[i][j] = delta - rho * y[i] * s[j];
            }
        }
        // h <- v' * h * v + rho s s'
        let mut hv = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += h[i][t] * v[t][j];
                }
                hv[i][j] = acc;
            }
        }
        let mut next = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += v[t][i] * hv[t][j];
                }
                next[i][j] = acc + rho * s[i] * s[j];
            }
        }
        h = next;
    }

    let g = gather(grad);
    for (row, &coord) in members.iter().enumerate() {
        let mut acc = 0.0;
        for t in 0..k {
            acc += h[row][t] * g[t];
        }
        d[coord] = -acc;
    }
    d
}

/// Compares the two-loop direction against [`dense_bfgs_direction`] on
/// random instances (dimension <= `max_n`, up to `max_pairs` pairs that all
/// pass the curvature screen). Metric: relative l2 error per instance,
/// maximum reported.
pub fn check_two_loop(seed: u64, cases: usize, max_n: usize, max_pairs: usize) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed);
    let mut report = CheckReport::default();
    let mut worst = 0.0f64;
    let eps: f64 = 1e-9;
    for _ in 0..cases {
        let n = 2 + (rng.gen::<u64>() as usize) % (max_n - 1);
        let pairs = 1 + (rng.gen::<u64>() as usize) % max_pairs;
        let mut history = HistoryBuffer::new(pairs);
        let mut mask = vec![false; n];
        for (i, slot) in mask.iter_mut().enumerate() {
            *slot = i == 0 || rng.gen::<f64>() < 0.7;
        }
        let s_set = IndexSet::new(mask);

        let mut stored = 0;
        while stored < pairs {
            let s = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
            // y close to a positive multiple of s keeps the screened
            // curvature safely positive.
            let y = DenseVector::from_fn(n, |i| {
                (0.5 + rng.gen::<f64>()) * s[i] + 0.05 * rng.sample::<f64, _>(StandardNormal)
            });
            let sy = crate::kernels::masked_dot(&s, &y, &s_set)?;
            let yy = crate::kernels::masked_norm_sq(&y, &s_set);
            if sy > eps.max(1e-3) * yy {
                history.push(CurvaturePair { s, y });
                stored += 1;
            }
        }

        let grad = DenseVector::from_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let fast = lbfgsb::two_loop_direction(&grad, &history, &s_set, eps)?;
        let slow = dense_bfgs_direction(&grad, &history, &s_set, eps);
        let diff = crate::kernels::sub(&fast, &slow).norm2();
        let rel = diff / slow.norm2().max(1e-300);
        worst = worst.max(rel);
    }
    report.push(
        format!("two-loop vs dense inverse-BFGS ({cases} instances, n<={max_n}, <={max_pairs} pairs)"),
        worst,
        1e-9,
    );
    Ok(report)
}

/// Maximum guarded relative error between an analytic gradient and central
/// finite differences with step `h`.
pub fn fd_max_rel_err(
    mut value: impl FnMut(&DenseVector) -> Result<f64>,
    grad: &DenseVector,
    x: &DenseVector,
    h: f64,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let fd = (value(&xp)? - value(&xm)?) / (2.0 * h);
        let rel = (grad[k] - fd).abs() / grad[k].abs().max(1.0);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn check_problem_gradients(
    report: &mut CheckReport,
    name: &str,
    problem: &mut ConstrainedProblem,
    points: &[DenseVector],
    threshold: f64,
) -> Result<()> {
    let mut worst_obj = 0.0f64;
    let mut worst_eq = 0.0f64;
    let mut worst_ineq = 0.0f64;
    for x in points {
        let (_, grad) = problem.objective.value_grad(x)?;
        let worst = {
            let obj = &mut problem.objective;
            fd_max_rel_err(|p| obj.value_grad(p).map(|(f, _)| f), &grad, x, 1e-6)?
        };
        worst_obj = worst_obj.max(worst);

        // Directional Jacobian check: grad of <v, c(x)> must match J'v.
        if let Some(eq) = &mut problem.eq {
            let dim = eq.dim();
            let v = DenseVector::from_fn(dim, |i| 0.3 + (i as f64 * 0.17).sin());
            let jtv = eq.jacobian_t_vec(x, &v)?;
            let worst = fd_max_rel_err(
                |p| {
                    let h = eq.eval(p)?;
                    Ok(crate::kernels::dot(&h, &v))
                },
                &jtv,
                x,
                1e-6,
            )?;
            worst_eq = worst_eq.max(worst);
        }
        if let Some(ineq) = &mut problem.ineq {
            let dim = ineq.dim();
            let v = DenseVector::from_fn(dim, |i| 0.2 + (i as f64 * 0.31).cos());
            let jtv = ineq.jacobian_t_vec(x, &v)?;
            let worst = fd_max_rel_err(
                |p| {
                    let g = ineq.eval(p)?;
                    Ok(crate::kernels::dot(&g, &v))
                },
                &jtv,
                x,
                1e-6,
            )?;
            worst_ineq = worst_ineq.max(worst);
        }
    }
    report.push(format!("{name}: objective gradient"), worst_obj, threshold);
    if problem.eq.is_some() {
        report.push(format!("{name}: equality J'v"), worst_eq, threshold);
    }
    if problem.ineq.is_some() {
        report.push(format!("{name}: inequality J'v"), worst_ineq, threshold);
    }
    Ok(())
}

/// Finite-difference audit of every analytic gradient: the problem
/// builders, a set of modeling-language programs covering the operator
/// surface, and the augmented-Lagrangian value/gradient. 20 random points
/// per problem, threshold 1e-6 relative.
pub fn check_gradients(seed: u64) -> Result<CheckReport> {
    const POINTS: usize = 20;
    const THRESHOLD: f64 = 1e-6;
    let mut rng = seeded_rng(seed);
    let mut report = CheckReport::default();

    // Interior points, away from bound kinks and log domains' edges.
    fn positive_points(
        rng: &mut rand_chacha::ChaCha8Rng,
        n: usize,
        lo: f64,
        width: f64,
    ) -> Vec<DenseVector> {
        (0..POINTS)
            .map(|_| DenseVector::from_fn(n, |_| lo + width * rng.gen::<f64>()))
            .collect()
    }

    // NNLS objective (pure box problem; wrap as unconstrained).
    {
        let instance = problems::gen_nnls(problems::NnlsKind::II, 0.004, seed ^ 0x11)?;
        let (objective, bounds) = problems::build_nnls(&instance);
        let n = instance.a.cols();
        let mut problem = ConstrainedProblem::box_only(n, Box::new(objective), bounds)?;
        let points = positive_points(&mut rng, n, 0.1, 1.0);
        check_problem_gradients(&mut report, "nnls", &mut problem, &points, THRESHOLD)?;
    }

    // Dual SVM.
    {
        let (points_m, labels) = problems::gen_svm_blobs(24, 3, seed ^ 0x22);
        let mut problem = problems::build_dual_svm(&points_m, &labels, 1.0, 1.0)?;
        let points = positive_points(&mut rng, 24, 0.1, 0.8);
        check_problem_gradients(&mut report, "dual-svm", &mut problem, &points, THRESHOLD)?;
    }

    // Joint probability, both regularizers.
    for reg in [Regularizer::Entropy, Regularizer::Gaussian] {
        let instance = problems::gen_joint_dataset2(4, 0.5, reg, seed ^ 0x33)?;
        let mut problem = problems::build_joint_prob(&instance)?;
        let n = instance.rows() * instance.cols();
        let points = positive_points(&mut rng, n, 0.05, 1.0);
        check_problem_gradients(
            &mut report,
            &format!("joint-prob ({reg})"),
            &mut problem,
            &points,
            THRESHOLD,
        )?;
    }

    // Fairness, both constraint losses.
    for loss in [ConstraintLoss::Logistic, ConstraintLoss::Linear] {
        let instance = problems::gen_fairness(30, 4, 1e-3, loss, seed ^ 0x44)?;
        let mut problem = problems::build_fair_logreg(&instance)?;
        let points = (0..POINTS)
            .map(|_| DenseVector::from_fn(4, |_| rng.sample::<f64, _>(StandardNormal)))
            .collect::<Vec<_>>();
        check_problem_gradients(
            &mut report,
            &format!("fairness ({loss})"),
            &mut problem,
            &points,
            THRESHOLD,
        )?;
    }

    // Modeling-language programs over the full operator set.
    {
        let models: Vec<(&str, &str, BTreeMap<String, modeling::Value>)> = vec![
            (
                "dsl norm2(A*x-b)",
                "parameters Matrix A Vector b variables Vector x min norm2(A*x-b)",
                {
                    let mut b = BTreeMap::new();
                    b.insert(
                        "A".into(),
                        modeling::Value::Matrix(DenseMatrix::from_fn(3, 2, |i, j| {
                            ((i * 2 + j) as f64 * 0.37).sin()
                        })),
                    );
                    b.insert(
                        "b".into(),
                        modeling::Value::Vector(DenseVector::from(vec![0.4, -0.2, 0.7])),
                    );
                    b
                },
            ),
            (
                "dsl entropy + marginals objective",
                "parameters Matrix M variables Matrix P \
                 min sum(M .* P) + 0.5 * sum(P .* log(P)) + sum(exp(-P)) / 3",
                {
                    let mut b = BTreeMap::new();
                    b.insert(
                        "M".into(),
                        modeling::Value::Matrix(DenseMatrix::from_fn(2, 3, |i, j| {
                            0.1 + 0.8 * (((i * 3 + j) as f64 * 0.23).cos().abs())
                        })),
                    );
                    b
                },
            ),
            (
                "dsl logistic",
                "parameters Matrix X Vector y variables Vector w \
                 min sum(log1p(exp(-(X*w) .* y))) / 5 + 0.01 * sum(w .* w) - norm2(w) / 50",
                {
                    let mut b = BTreeMap::new();
                    b.insert(
                        "X".into(),
                        modeling::Value::Matrix(DenseMatrix::from_fn(5, 3, |i, j| {
                            ((i * 3 + j) as f64 * 0.71).sin()
                        })),
                    );
                    b.insert(
                        "y".into(),
                        modeling::Value::Vector(DenseVector::from_fn(5, |i| {
                            if i % 2 == 0 {
                                1.0
                            } else {
                                -1.0
                            }
                        })),
                    );
                    b
                },
            ),
        ];
        for (name, src, bindings) in models {
            let ast = modeling::parse(src)?;
            let (model, _) = modeling::compile(&ast, &bindings)?;
            let n = model.total_len();
            let points = positive_points(&mut rng, n, 0.1, 0.9);
            let mut worst = 0.0f64;
            for x in &points {
                let (_, grad) = model.eval_with_gradient(x)?;
                let err = fd_max_rel_err(
                    |p| model.eval_with_gradient(p).map(|(f, _)| f),
                    &grad,
                    x,
                    1e-6,
                )?;
                worst = worst.max(err);
            }
            report.push(format!("{name}: gradient"), worst, THRESHOLD);
        }
    }

    // Augmented-Lagrangian value/gradient with nonzero multipliers.
    {
        let (points_m, labels) = problems::gen_svm_blobs(16, 2, seed ^ 0x55);
        let mut problem = problems::build_dual_svm(&points_m, &labels, 1.0, 1.0)?;
        let mut mult = Multipliers::zeros(1, 0, 3.0);
        mult.lambda = DenseVector::from(vec![0.7]);
        let points = positive_points(&mut rng, 16, 0.1, 0.8);
        let mut worst = 0.0f64;
        for x in &points {
            let (_, grad) = auglag::auglag_value_grad(&mut problem, x, &mult)?;
            let err = fd_max_rel_err(
                |p| auglag::auglag_value_grad(&mut problem, p, &mult).map(|(l, _)| l),
                &grad,
                x,
                1e-6,
            )?;
            worst = worst.max(err);
        }
        report.push("augmented Lagrangian value/gradient", worst, THRESHOLD);
    }

    Ok(report)
}

/// Outcome of one entropic-transport cross-check.
#[derive(Debug, Clone)]
pub struct SinkhornComparison {
    /// Infinity-norm marginal residual of the solver's plan.
    pub marginal_residual: f64,
    /// Relative objective difference against the Sinkhorn plan.
    pub objective_rel_diff: f64,
    /// Maximum entrywise absolute difference between the plans.
    pub entrywise_max_diff: f64,
    pub solver_status: AuglagStatus,
}

/// Solves an entropic joint-probability instance with the augmented
/// Lagrangian and compares against log-domain Sinkhorn run to `sinkhorn_tol`.
pub fn sinkhorn_cross_check(
    instance: &problems::JointProbInstance,
    cfg: &AuglagConfig,
    sinkhorn_tol: f64,
) -> Result<SinkhornComparison> {
    assert_eq!(
        instance.regularizer,
        Regularizer::Entropy,
        "sinkhorn solves the entropic case only"
    );
    let (m, n) = (instance.rows(), instance.cols());
    let mut problem = problems::build_joint_prob(instance)?;
    let res = auglag::solve(&mut problem, cfg)?;

    let reference = problems::sinkhorn(
        &instance.u,
        &instance.v,
        &instance.cost,
        instance.lambda,
        sinkhorn_tol,
        200_000,
    )?;

    let objective_of = |p: &DenseMatrix| -> f64 {
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..n {
                let v = p.get(i, j);
                let plogp = if v == 0.0 { 0.0 } else { v * v.ln() };
                acc += instance.cost.get(i, j) * v + instance.lambda * plogp;
            }
        }
        acc
    };

    let plan = DenseMatrix::from_fn(m, n, |i, j| res.x[j * m + i]);
    let mut marginal_residual = 0.0f64;
    for i in 0..m {
        let s: f64 = (0..n).map(|j| plan.get(i, j)).sum();
        marginal_residual = marginal_residual.max((s - instance.u[i]).abs());
    }
    for j in 0..n {
        let s: f64 = (0..m).map(|i| plan.get(i, j)).sum();
        marginal_residual = marginal_residual.max((s - instance.v[j]).abs());
    }

    let f_solver = objective_of(&plan);
    let f_reference = objective_of(&reference);
    let objective_rel_diff = (f_solver - f_reference).abs() / f_reference.abs().max(1e-300);

    let mut entrywise = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            entrywise = entrywise.max((plan.get(i, j) - reference.get(i, j)).abs());
        }
    }

    Ok(SinkhornComparison {
        marginal_residual,
        objective_rel_diff,
        entrywise_max_diff: entrywise,
        solver_status: res.status,
    })
}

/// Entropic cross-check on a random-cost 20x20 instance.
pub fn check_sinkhorn(seed: u64) -> Result<CheckReport> {
    let mut rng = seeded_rng(seed);
    let n = 20;
    let (u, v) = problems::gaussian_mixture_marginals(n);
    let cost = DenseMatrix::from_fn(n, n, |_, _| rng.gen::<f64>());
    let instance = problems::JointProbInstance::new(u, v, cost, 0.5, Regularizer::Entropy)?;

    let mut cfg = AuglagConfig::default();
    cfg.feas_tol = 1e-7;
    cfg.inner.tol = 1e-5;
    cfg.inner.max_iters = 20_000;
    let cmp = sinkhorn_cross_check(&instance, &cfg, 1e-12)?;

    let mut report = CheckReport::default();
    report.push(
        format!("entropic 20x20: solver converged (status {})", cmp.solver_status),
        if cmp.solver_status == AuglagStatus::Converged {
            0.0
        } else {
            1.0
        },
        0.0,
    );
    report.push("entropic 20x20: marginal residual", cmp.marginal_residual, 1e-6);
    report.push(
        "entropic 20x20: objective vs sinkhorn (relative)",
        cmp.objective_rel_diff,
        1e-5,
    );
    report.push(
        "entropic 20x20: entrywise plan difference",
        cmp.entrywise_max_diff,
        1e-4,
    );
    Ok(report)
}

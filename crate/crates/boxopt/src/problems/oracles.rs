//! Slow-but-sure reference solvers used to cross-check the main method.
//!
//! These are deliberately independent implementations: projected gradient
//! descent for box problems, a first-order multiplier loop around it for the
//! dual SVM, and log-stabilized Sinkhorn scaling for entropic transport.

use crate::error::{Error, Result};
use crate::kernels::{
    add_scaled, clip_to_box, dot, sub, BoxBounds, DenseMatrix, DenseVector,
};
use crate::lbfgsb::Objective;

/// Step-size policy for [`projected_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Armijo backtracking from a slowly growing trial step.
    Backtracking,
    /// Barzilai-Borwein spectral step with a backtracking safeguard;
    /// converges far faster on ill-conditioned quadratics.
    BarzilaiBorwein,
}

/// Projected gradient descent `x <- clip(x - alpha grad)` run until the
/// projected-gradient residual reaches machine-level precision or the
/// evaluation budget `max_evals` is exhausted. Returns the final iterate.
pub fn projected_gradient(
    oracle: &mut dyn Objective,
    bounds: &BoxBounds,
    x0: &DenseVector,
    max_evals: usize,
    step_rule: StepRule,
) -> Result<DenseVector> {
    const RESIDUAL_TOL: f64 = 1e-13;
    const C1: f64 = 1e-4;

    let mut x = clip_to_box(x0, bounds)?;
    let (mut f, mut grad) = oracle.value_grad(&x)?;
    let mut evals = 1usize;
    let mut alpha = 1.0f64;
    let mut prev: Option<(DenseVector, DenseVector)> = None;

    while evals < max_evals {
        let residual = sub(&clip_to_box(&sub(&x, &grad), bounds)?, &x).inf_norm();
        if residual <= RESIDUAL_TOL * (1.0 + grad.inf_norm()) {
            break;
        }

        let mut trial_alpha = match step_rule {
            StepRule::Backtracking => (alpha * 2.0).min(1e12),
            StepRule::BarzilaiBorwein => match &prev {
                Some((s, y)) => {
                    let sy = dot(s, y);
                    if sy > 0.0 {
                        (dot(s, s) / sy).clamp(1e-12, 1e12)
                    } else {
                        1.0
                    }
                }
                None => alpha,
            },
        };

        // Backtrack along the projection arc until sufficient decrease.
        let mut accepted = None;
        while evals < max_evals {
            let x_trial = clip_to_box(&add_scaled(&x, &grad, -trial_alpha), bounds)?;
            let step = sub(&x_trial, &x);
            if step.inf_norm() == 0.0 {
                break;
            }
            let (f_trial, grad_trial) = oracle.value_grad(&x_trial)?;
            evals += 1;
            if f_trial <= f + C1 * dot(&grad, &step) {
                accepted = Some((x_trial, f_trial, grad_trial));
                break;
            }
            trial_alpha *= 0.5;
            if trial_alpha < 1e-18 {
                break;
            }
        }

        let Some((x_new, f_new, grad_new)) = accepted else {
            break;
        };
        prev = Some((sub(&x_new, &x), sub(&grad_new, &grad)));
        alpha = trial_alpha;
        x = x_new;
        f = f_new;
        grad = grad_new;
    }
    Ok(x)
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let collected: Vec<f64> = terms.collect();
    let peak = collected.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if peak == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    peak + collected.iter().map(|&t| (t - peak).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn scaling for the entropic transport plan with kernel
/// `K_ij = exp(-M_ij / lambda)`. Alternates the row and column potential
/// updates until both marginal errors are at most `tol` in infinity norm.
pub fn sinkhorn(
    u: &DenseVector,
    v: &DenseVector,
    m: &DenseMatrix,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<DenseMatrix> {
    let (rows, cols) = (m.rows(), m.cols());
    if u.len() != rows || v.len() != cols {
        return Err(Error::Dimension {
            context: "sinkhorn marginals",
            expected: rows,
            got: u.len(),
        });
    }
    if lambda <= 0.0 || tol <= 0.0 {
        return Err(Error::InvalidData(
            "sinkhorn requires lambda > 0 and tol > 0".into(),
        ));
    }

    let log_u = DenseVector::from_fn(rows, |i| u[i].ln());
    let log_v = DenseVector::from_fn(cols, |j| v[j].ln());
    let mut alpha = DenseVector::zeros(rows);
    let mut beta = DenseVector::zeros(cols);

    let plan = |alpha: &DenseVector, beta: &DenseVector| {
        DenseMatrix::from_fn(rows, cols, |i, j| {
            ((alpha[i] + beta[j] - m.get(i, j)) / lambda).exp()
        })
    };

    for _ in 0..max_iters {
        for i in 0..rows {
            let lse = log_sum_exp((0..cols).map(|j| (beta[j] - m.get(i, j)) / lambda));
            alpha[i] = lambda * (log_u[i] - lse);
        }
        for j in 0..cols {
            let lse = log_sum_exp((0..rows).map(|i| (alpha[i] - m.get(i, j)) / lambda));
            beta[j] = lambda * (log_v[j] - lse);
        }

        let p = plan(&alpha, &beta);
        let mut row_err = 0.0f64;
        for i in 0..rows {
            let s: f64 = (0..cols).map(|j| p.get(i, j)).sum();
            row_err = row_err.max((s - u[i]).abs());
        }
        let mut col_err = 0.0f64;
        for j in 0..cols {
            let s: f64 = (0..rows).map(|i| p.get(i, j)).sum();
            col_err = col_err.max((s - v[j]).abs());
        }
        if row_err <= tol && col_err <= tol {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence(format!(
        "sinkhorn did not meet tol {tol} within {max_iters} iterations"
    )))
}

/// Reference solution of the dual SVM by projected gradient plus a scalar
/// multiplier loop on `y'a = 0`. Independent of the quasi-Newton path.
///
/// Returns the dual iterate; the caller evaluates whatever objective it
/// wants to compare.
pub fn svm_reference_solve(
    kernel: &DenseMatrix,
    labels: &DenseVector,
    c: f64,
    feas_tol: f64,
    max_outer: usize,
    inner_evals: usize,
) -> Result<DenseVector> {
    let n = kernel.rows();
    let bounds = BoxBounds::uniform(n, 0.0, c)?;
    let mut a = DenseVector::zeros(n);
    let mut lambda = 0.0f64;
    let mut rho = 1.0f64;
    let mut v_prev = f64::INFINITY;

    for _ in 0..max_outer {
        let y = labels.clone();
        let k = kernel.clone();
        let (lam, r) = (lambda, rho);
        let mut oracle = move |p: &DenseVector| {
            let t = DenseVector::from_fn(n, |i| p[i] * y[i]);
            let kt = crate::kernels::matvec(&k, &t, false).expect("kernel shape");
            let h = dot(&y, p);
            let shifted = h + lam / r;
            let f = 0.5 * dot(&t, &kt) - p.sum() + 0.5 * r * shifted * shifted;
            let grad = DenseVector::from_fn(n, |i| y[i] * kt[i] - 1.0 + r * shifted * y[i]);
            (f, grad)
        };
        a = projected_gradient(
            &mut oracle,
            &bounds,
            &a,
            inner_evals,
            StepRule::BarzilaiBorwein,
        )?;
        let h = dot(labels, &a);
        lambda += rho * h;
        let v_now = h.abs();
        if v_now <= feas_tol {
            return Ok(a);
        }
        if v_now > 0.5 * v_prev {
            rho = (rho * 2.0).min(1e12);
        }
        v_prev = v_now;
    }
    Err(Error::NoConvergence(format!(
        "svm reference solver left |y'a| above {feas_tol} after {max_outer} outer rounds"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn projected_gradient_solves_tiny_nnls() {
        // f(x) = ||x - b||^2 over x >= 0 with b = [1, -1].
        let b = DenseVector::from(vec![1.0, -1.0]);
        let mut oracle = move |x: &DenseVector| {
            let r = sub(x, &b);
            (dot(&r, &r), crate::kernels::scale(&r, 2.0))
        };
        let bounds = BoxBounds::non_negative(2);
        for rule in [StepRule::Backtracking, StepRule::BarzilaiBorwein] {
            let x = projected_gradient(
                &mut oracle,
                &bounds,
                &DenseVector::zeros(2),
                10_000,
                rule,
            )
            .unwrap();
            assert_relative_eq!(x[0], 1.0, epsilon = 1e-9);
            assert_eq!(x[1], 0.0);
        }
    }

    #[test]
    fn projected_gradient_matches_closed_form_unconstrained() {
        let c = DenseVector::from(vec![2.0, -1.0, 0.5]);
        let diag = [1.0, 4.0, 0.25];
        let mut oracle = move |x: &DenseVector| {
            let f: f64 = (0..3).map(|i| 0.5 * diag[i] * (x[i] - c[i]).powi(2)).sum();
            let g = DenseVector::from_fn(3, |i| diag[i] * (x[i] - c[i]));
            (f, g)
        };
        let bounds = BoxBounds::unbounded(3);
        let x = projected_gradient(
            &mut oracle,
            &bounds,
            &DenseVector::zeros(3),
            200_000,
            StepRule::BarzilaiBorwein,
        )
        .unwrap();
        for i in 0..3 {
            assert_relative_eq!(x[i], [2.0, -1.0, 0.5][i], epsilon = 1e-8);
        }
    }

    #[test]
    fn sinkhorn_symmetric_two_by_two() {
        let u = DenseVector::from(vec![0.5, 0.5]);
        let m = DenseMatrix::from_fn(2, 2, |_, _| 0.3);
        let p = sinkhorn(&u, &u, &m, 0.5, 1e-10, 10_000).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(p.get(i, j), 0.25, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sinkhorn_meets_marginal_contract() {
        let (u, v) = super::super::gaussian_mixture_marginals(16);
        let m = super::super::outer_product_cost(16);
        let tol = 1e-9;
        let p = sinkhorn(&u, &v, &m, 0.5, tol, 100_000).unwrap();
        assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        for i in 0..16 {
            let s: f64 = (0..16).map(|j| p.get(i, j)).sum();
            assert!((s - u[i]).abs() <= tol);
        }
        for j in 0..16 {
            let s: f64 = (0..16).map(|i| p.get(i, j)).sum();
            assert!((s - v[j]).abs() <= tol);
        }
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let u = DenseVector::from(vec![0.9, 0.1]);
        let v = DenseVector::from(vec![0.2, 0.8]);
        let m = DenseMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64);
        assert!(matches!(
            sinkhorn(&u, &v, &m, 0.5, 1e-300, 1),
            Err(Error::NoConvergence(_))
        ));
    }
}

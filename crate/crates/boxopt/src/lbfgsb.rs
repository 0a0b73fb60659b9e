//! Box-constrained limited-memory quasi-Newton solver.
//!
//! This is an L-BFGS-B variant that never computes a Cauchy point. The set
//! of variables to optimize in an iteration (the working set) is read off
//! componentwise from the current iterate and gradient, the search direction
//! comes from a two-loop recursion whose curvature pairs are screened per
//! working set, and the step is a projected or truncated move with Armijo
//! backtracking. Every stage is a componentwise pass, a reduction, or a
//! matrix-free vector operation, so nothing in an iteration is inherently
//! sequential across coordinates.
//!
//! A solver run owns its state exclusively and is single-threaded;
//! independent runs may execute concurrently.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::kernels::{
    add_scaled_masked, apply_mask, clip_to_box, dot, masked_dot, masked_inf_norm, masked_norm_sq,
    sub, DenseVector, IndexSet,
};

pub use crate::kernels::BoxBounds;

/// Evaluation contract: value and gradient at a point.
///
/// Implementations may fail (propagated by the solver) but a non-finite
/// objective value at an accepted point is treated as an evaluation error.
pub trait Objective {
    fn value_grad(&mut self, x: &DenseVector) -> Result<(f64, DenseVector)>;
}

impl<F> Objective for F
where
    F: FnMut(&DenseVector) -> (f64, DenseVector),
{
    fn value_grad(&mut self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        Ok(self(x))
    }
}

/// Step and gradient-change vectors from one accepted iteration.
#[derive(Debug, Clone)]
pub struct CurvaturePair {
    /// `x_{k+1} - x_k`
    pub s: DenseVector,
    /// `grad_{k+1} - grad_k`
    pub y: DenseVector,
}

/// Ring buffer of at most `m` curvature pairs, oldest first.
///
/// Pairs are stored unconditionally; whether a pair participates in a
/// direction computation is decided at use time by the per-working-set
/// curvature screen. The one exception is a zero step (`s = 0`), which is
/// dropped at storage time since its screen ratio would be 0/0.
#[derive(Debug, Clone, Default)]
pub struct HistoryBuffer {
    pairs: VecDeque<CurvaturePair>,
    capacity: usize,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            pairs: VecDeque::with_capacity(capacity.min(64)),
            capacity,
        }
    }

    pub fn push(&mut self, pair: CurvaturePair) {
        assert_eq!(pair.s.len(), pair.y.len(), "curvature pair length mismatch");
        if let Some(front) = self.pairs.front() {
            assert_eq!(front.s.len(), pair.s.len(), "curvature pair length mismatch");
        }
        if self.capacity == 0 || pair.s.iter().all(|&v| v == 0.0) {
            return;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back(pair);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Oldest-to-newest iteration order.
    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &CurvaturePair> {
        self.pairs.iter()
    }

    pub fn get(&self, idx: usize) -> &CurvaturePair {
        &self.pairs[idx]
    }
}

/// Solver parameters. One `eps_active` plays the activity-width, descent-
/// margin and curvature-screen roles.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Activity width for the working set, descent margin for the projection
    /// test, and scale factor of the curvature screen.
    pub eps_active: f64,
    /// Number of stored curvature pairs.
    pub memory_m: usize,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo_c1: f64,
    /// Multiplicative step reduction on a rejected trial.
    pub backtrack_shrink: f64,
    /// Maximum rejected trials per line search.
    pub max_backtracks: usize,
    /// Convergence threshold on the working-set gradient infinity norm.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_active: 1e-9,
            memory_m: 10,
            armijo_c1: 1e-4,
            backtrack_shrink: 0.5,
            max_backtracks: 50,
            tol: 1e-6,
            max_iters: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_active > 0.0
            && self.armijo_c1 > 0.0
            && self.armijo_c1 < 1.0
            && self.backtrack_shrink > 0.0
            && self.backtrack_shrink < 1.0
            && self.tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidData(format!("invalid solver config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverStatus::Converged => write!(f, "converged"),
            SolverStatus::MaxIters => write!(f, "max-iters"),
            SolverStatus::LineSearchFailure => write!(f, "line-search-failure"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub x_star: DenseVector,
    pub f_star: f64,
    /// `max_{i in S} |grad_i|` at the final iterate.
    pub grad_inf_norm_on_working_set: f64,
    /// Completed iterations (accepted steps).
    pub iterations: usize,
    pub status: SolverStatus,
    /// Objective evaluations consumed, line-search trials included.
    pub n_evals: usize,
}

/// Which branch `project_direction` took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionBranch {
    /// The clipped step passed the descent and minimum-norm tests.
    Projected,
    /// The raw direction with boundary-escaping coordinates zeroed.
    Truncated,
}

/// Snapshot handed to an iteration observer after each accepted step (and
/// once for the initial iterate).
#[derive(Debug)]
pub struct IterationRecord<'a> {
    pub iteration: usize,
    pub x: &'a DenseVector,
    pub f: f64,
    /// Working-set gradient infinity norm at `x`.
    pub grad_ws_inf: f64,
    pub working_set_size: usize,
}

/// Working set of free variables: coordinate `i` is excluded iff it sits
/// within `eps` of a bound with the gradient pointing outward, i.e.
/// `x_i <= l_i + eps` with `grad_i >= 0`, or `x_i >= u_i - eps` with
/// `grad_i <= 0`. One componentwise pass, no cross-coordinate dependency.
pub fn compute_working_set(
    x: &DenseVector,
    grad: &DenseVector,
    bounds: &BoxBounds,
    eps: f64,
) -> Result<IndexSet> {
    let n = x.len();
    if grad.len() != n {
        return Err(Error::Dimension {
            context: "compute_working_set",
            expected: n,
            got: grad.len(),
        });
    }
    if bounds.len() != n {
        return Err(Error::Dimension {
            context: "compute_working_set bounds",
            expected: n,
            got: bounds.len(),
        });
    }
    let (l, u) = (bounds.lower(), bounds.upper());
    Ok(IndexSet::from_fn(n, |i| {
        let lower_fixed = x[i] <= l[i] + eps && grad[i] >= 0.0;
        let upper_fixed = x[i] >= u[i] - eps && grad[i] <= 0.0;
        !(lower_fixed || upper_fixed)
    }))
}

/// `-q_i` on members of `s`, exact `0.0` elsewhere.
fn negate_masked(q: &DenseVector, s: &IndexSet) -> DenseVector {
    DenseVector::from_fn(q.len(), |i| if s.contains(i) { -q[i] } else { 0.0 })
}

/// Two-loop recursion restricted to the working set, with per-pair
/// curvature screening.
///
/// A stored pair participates only if `<s[S], y[S]> > eps * ||y[S]||^2`.
/// The initial inverse-Hessian scaling comes from the newest participating
/// pair; with no participating pair the result is steepest descent on the
/// working set. The returned direction is exactly zero on the complement
/// of `s_set`.
pub fn two_loop_direction(
    grad: &DenseVector,
    history: &HistoryBuffer,
    s_set: &IndexSet,
    eps: f64,
) -> Result<DenseVector> {
    let n = grad.len();
    if s_set.len() != n {
        return Err(Error::Dimension {
            context: "two_loop_direction mask",
            expected: n,
            got: s_set.len(),
        });
    }
    let m = history.len();
    let mut rho = vec![0.0; m];
    let mut participates = vec![false; m];
    for idx in 0..m {
        let pair = history.get(idx);
        if pair.s.len() != n {
            return Err(Error::Dimension {
                context: "two_loop_direction pair",
                expected: n,
                got: pair.s.len(),
            });
        }
        let r = masked_dot(&pair.s, &pair.y, s_set)?;
        rho[idx] = r;
        participates[idx] = r > eps * masked_norm_sq(&pair.y, s_set);
    }

    let newest = (0..m).rev().find(|&idx| participates[idx]);
    let Some(newest) = newest else {
        return Ok(negate_masked(grad, s_set));
    };

    let mut q = apply_mask(grad, s_set);
    let mut alpha = vec![0.0; m];
    for idx in (0..m).rev() {
        if participates[idx] {
            let pair = history.get(idx);
            let a = masked_dot(&pair.s, &q, s_set)? / rho[idx];
            alpha[idx] = a;
            q = add_scaled_masked(&q, &pair.y, -a, s_set);
        }
    }

    let gamma = rho[newest] / masked_norm_sq(&history.get(newest).y, s_set);
    q = crate::kernels::scale(&q, gamma);

    for idx in 0..m {
        if participates[idx] {
            let pair = history.get(idx);
            let beta = masked_dot(&pair.y, &q, s_set)? / rho[idx];
            q = add_scaled_masked(&q, &pair.s, alpha[idx] - beta, s_set);
        }
    }
    Ok(negate_masked(&q, s_set))
}

/// Projects a search direction onto the feasible box.
///
/// The projected candidate is `p = clip(x + d) - x`; it is returned when it
/// is a sufficient descent direction (`<p, grad> <= -eps * ||p||^2`) of
/// non-negligible length (`||p||^2 >= eps`). Otherwise the raw direction is
/// truncated: coordinates pushing past an eps-active bound are zeroed.
pub fn project_direction(
    x: &DenseVector,
    grad: &DenseVector,
    d: &DenseVector,
    bounds: &BoxBounds,
    eps: f64,
) -> Result<(DenseVector, ProjectionBranch)> {
    let n = x.len();
    if grad.len() != n || d.len() != n {
        return Err(Error::Dimension {
            context: "project_direction",
            expected: n,
            got: grad.len().max(d.len()),
        });
    }
    let z = crate::kernels::add_scaled(x, d, 1.0);
    let zc = clip_to_box(&z, bounds)?;
    let p = sub(&zc, x);
    let p_sq = dot(&p, &p);
    if dot(&p, grad) <= -eps * p_sq && p_sq >= eps {
        return Ok((p, ProjectionBranch::Projected));
    }
    let (l, u) = (bounds.lower(), bounds.upper());
    let p = DenseVector::from_fn(n, |i| {
        let escapes_lower = d[i] < 0.0 && x[i] <= l[i] + eps;
        let escapes_upper = d[i] > 0.0 && x[i] >= u[i] - eps;
        if escapes_lower || escapes_upper {
            0.0
        } else {
            d[i]
        }
    });
    Ok((p, ProjectionBranch::Truncated))
}

/// Largest `alpha >= 0` keeping `x + alpha * p` inside the box, as the
/// minimum over per-coordinate blocking ratios; `+inf` when no coordinate
/// blocks (in particular for `p = 0`).
pub fn max_feasible_step(x: &DenseVector, p: &DenseVector, bounds: &BoxBounds) -> f64 {
    assert_eq!(x.len(), p.len(), "max_feasible_step: length mismatch");
    assert_eq!(x.len(), bounds.len(), "max_feasible_step: bounds length mismatch");
    let (l, u) = (bounds.lower(), bounds.upper());
    let mut alpha = f64::INFINITY;
    for i in 0..x.len() {
        if p[i] > 0.0 && u[i].is_finite() {
            alpha = alpha.min((u[i] - x[i]) / p[i]);
        } else if p[i] < 0.0 && l[i].is_finite() {
            alpha = alpha.min((l[i] - x[i]) / p[i]);
        }
    }
    alpha
}

/// One accepted line-search step.
#[derive(Debug, Clone)]
pub struct AcceptedStep {
    pub alpha: f64,
    pub x_new: DenseVector,
    pub f_new: f64,
    pub grad_new: DenseVector,
}

/// Backtracking line search for the Armijo condition
/// `f(x + alpha p) <= f(x) + c1 * alpha * <grad, p>`.
///
/// Starts at `alpha = min(1, alpha_max)` and multiplies by
/// `backtrack_shrink` on each rejection, for at most `max_backtracks`
/// rejections. Trial points are re-clipped to the box so accepted iterates
/// are feasible exactly; non-finite trial values are rejected like any
/// failed decrease test. Returns `Ok(None)` when no trial is accepted.
#[allow(clippy::too_many_arguments)]
pub fn armijo_backtrack(
    oracle: &mut dyn Objective,
    x: &DenseVector,
    f: f64,
    grad: &DenseVector,
    p: &DenseVector,
    alpha_max: f64,
    bounds: &BoxBounds,
    cfg: &SolverConfig,
    n_evals: &mut usize,
) -> Result<Option<AcceptedStep>> {
    let gp = dot(grad, p);
    debug_assert!(gp < 0.0, "armijo_backtrack requires a descent direction");
    if !(alpha_max > 0.0) {
        return Ok(None);
    }
    let mut alpha = alpha_max.min(1.0);
    for _ in 0..=cfg.max_backtracks {
        let x_trial = clip_to_box(&crate::kernels::add_scaled(x, p, alpha), bounds)?;
        if x_trial == *x {
            // The step underflowed entirely; smaller alpha cannot differ.
            return Ok(None);
        }
        let (f_trial, grad_trial) = oracle.value_grad(&x_trial)?;
        *n_evals += 1;
        if f_trial <= f + cfg.armijo_c1 * alpha * gp && grad_trial.all_finite() {
            return Ok(Some(AcceptedStep {
                alpha,
                x_new: x_trial,
                f_new: f_trial,
                grad_new: grad_trial,
            }));
        }
        alpha *= cfg.backtrack_shrink;
    }
    Ok(None)
}

/// Converged iff `max_{i in S} |grad_i| <= tol`; an empty working set is
/// converged (all variables consistently fixed at bounds).
pub fn check_convergence(grad: &DenseVector, s_set: &IndexSet, tol: f64) -> bool {
    masked_inf_norm(grad, s_set) <= tol
}

/// Minimizes the oracle over the box starting from `x0` (clipped on entry).
pub fn minimize(
    oracle: &mut dyn Objective,
    bounds: &BoxBounds,
    x0: &DenseVector,
    cfg: &SolverConfig,
) -> Result<SolverResult> {
    minimize_observed(oracle, bounds, x0, cfg, &mut |_| {})
}

/// [`minimize`] with a per-iteration observer, called on the initial iterate
/// and after every accepted step.
pub fn minimize_observed(
    oracle: &mut dyn Objective,
    bounds: &BoxBounds,
    x0: &DenseVector,
    cfg: &SolverConfig,
    observe: &mut dyn FnMut(&IterationRecord<'_>),
) -> Result<SolverResult> {
    cfg.validate()?;
    if x0.len() != bounds.len() {
        return Err(Error::Dimension {
            context: "minimize",
            expected: bounds.len(),
            got: x0.len(),
        });
    }

    let mut n_evals = 0usize;
    let mut x = clip_to_box(x0, bounds)?;
    let (mut f, mut grad) = oracle.value_grad(&x)?;
    n_evals += 1;
    if !f.is_finite() || !grad.all_finite() {
        return Err(Error::Eval(format!(
            "objective not finite at the initial point (f = {f})"
        )));
    }
    if grad.len() != x.len() {
        return Err(Error::Dimension {
            context: "minimize gradient",
            expected: x.len(),
            got: grad.len(),
        });
    }

    let mut history = HistoryBuffer::new(cfg.memory_m);
    let mut iterations = 0usize;
    // Stall watch: consecutive accepted steps with no representable
    // decrease of f and no meaningful improvement of the working-set
    // gradient. f alone is not enough — near the f64 resolution floor the
    // gradient keeps converging through steps whose f-decrease rounds to
    // zero.
    let mut no_progress_streak = 0usize;
    let mut best_ws_grad = f64::INFINITY;
    const MAX_NO_PROGRESS: usize = 25;
    let status;

    {
        let s0 = compute_working_set(&x, &grad, bounds, cfg.eps_active)?;
        observe(&IterationRecord {
            iteration: 0,
            x: &x,
            f,
            grad_ws_inf: masked_inf_norm(&grad, &s0),
            working_set_size: s0.count(),
        });
    }

    loop {
        let s_set = compute_working_set(&x, &grad, bounds, cfg.eps_active)?;
        if check_convergence(&grad, &s_set, cfg.tol) {
            status = SolverStatus::Converged;
            break;
        }
        if iterations >= cfg.max_iters {
            status = SolverStatus::MaxIters;
            break;
        }

        let d = two_loop_direction(&grad, &history, &s_set, cfg.eps_active)?;
        let (p, _branch) = project_direction(&x, &grad, &d, bounds, cfg.eps_active)?;
        let mut step = None;
        let had_history = !history.is_empty();
        if dot(&grad, &p) < 0.0 {
            let alpha_max = max_feasible_step(&x, &p, bounds);
            step = armijo_backtrack(
                oracle, &x, f, &grad, &p, alpha_max, bounds, cfg, &mut n_evals,
            )?;
        }
        if step.is_none() && had_history {
            // Stale curvature pairs are the usual culprit: drop the history
            // and retry once with steepest descent on the working set.
            history.clear();
            let d = negate_masked(&grad, &s_set);
            let (p, _branch) = project_direction(&x, &grad, &d, bounds, cfg.eps_active)?;
            if dot(&grad, &p) < 0.0 {
                let alpha_max = max_feasible_step(&x, &p, bounds);
                step = armijo_backtrack(
                    oracle, &x, f, &grad, &p, alpha_max, bounds, cfg, &mut n_evals,
                )?;
            }
        }

        let Some(accepted) = step else {
            status = SolverStatus::LineSearchFailure;
            break;
        };

        let s_vec = sub(&accepted.x_new, &x);
        let y_vec = sub(&accepted.grad_new, &grad);
        history.push(CurvaturePair { s: s_vec, y: y_vec });

        let decreased = accepted.f_new < f;
        x = accepted.x_new;
        f = accepted.f_new;
        grad = accepted.grad_new;
        iterations += 1;

        let s_next = compute_working_set(&x, &grad, bounds, cfg.eps_active)?;
        let ws_grad = masked_inf_norm(&grad, &s_next);
        observe(&IterationRecord {
            iteration: iterations,
            x: &x,
            f,
            grad_ws_inf: ws_grad,
            working_set_size: s_next.count(),
        });

        if decreased || ws_grad < 0.99 * best_ws_grad {
            no_progress_streak = 0;
        } else {
            no_progress_streak += 1;
        }
        best_ws_grad = best_ws_grad.min(ws_grad);
        if no_progress_streak >= MAX_NO_PROGRESS {
            status = SolverStatus::LineSearchFailure;
            break;
        }
    }

    let s_final = compute_working_set(&x, &grad, bounds, cfg.eps_active)?;
    Ok(SolverResult {
        grad_inf_norm_on_working_set: masked_inf_norm(&grad, &s_final),
        x_star: x,
        f_star: f,
        iterations,
        status,
        n_evals,
    })
}

//! Augmented Lagrangian outer loop.
//!
//! Problems with general equality/inequality constraints and a variable box
//! are reduced to a sequence of box-constrained subproblems
//!
//! ```text
//! L(x, lambda, mu, rho) = f(x) + rho/2 ||h(x) + lambda/rho||^2
//!                              + rho/2 ||(g(x) + mu/rho)_+||^2
//! ```
//!
//! minimized by [`crate::lbfgsb::minimize`], followed by first-order
//! multiplier updates. If the infinity norm of the constraint violation is
//! not halved from one outer iteration to the next, the penalty `rho` is
//! multiplied by `rho_factor`.
//!
//! One outer solve is single-threaded; constraint callbacks are invoked
//! only from the solve's own thread.

use crate::error::{Error, Result};
use crate::kernels::{add_scaled, clip_to_box, dot, map, zip_map, BoxBounds, DenseVector};
use crate::lbfgsb::{
    minimize_observed, IterationRecord, Objective, SolverConfig, SolverResult, SolverStatus,
};

/// Vector-valued constraint block `c: R^n -> R^dim` together with products
/// `J_c(x)' v` of its transposed Jacobian with arbitrary vectors.
pub trait VectorConstraint {
    fn dim(&self) -> usize;
    fn eval(&mut self, x: &DenseVector) -> Result<DenseVector>;
    fn jacobian_t_vec(&mut self, x: &DenseVector, v: &DenseVector) -> Result<DenseVector>;
}

/// Constraint block backed by a pair of closures.
pub struct FnConstraint<E, J> {
    dim: usize,
    eval_fn: E,
    jtv_fn: J,
}

impl<E, J> FnConstraint<E, J>
where
    E: FnMut(&DenseVector) -> DenseVector,
    J: FnMut(&DenseVector, &DenseVector) -> DenseVector,
{
    pub fn new(dim: usize, eval_fn: E, jtv_fn: J) -> Self {
        Self {
            dim,
            eval_fn,
            jtv_fn,
        }
    }
}

impl<E, J> VectorConstraint for FnConstraint<E, J>
where
    E: FnMut(&DenseVector) -> DenseVector,
    J: FnMut(&DenseVector, &DenseVector) -> DenseVector,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&mut self, x: &DenseVector) -> Result<DenseVector> {
        Ok((self.eval_fn)(x))
    }

    fn jacobian_t_vec(&mut self, x: &DenseVector, v: &DenseVector) -> Result<DenseVector> {
        Ok((self.jtv_fn)(x, v))
    }
}

/// A smooth objective with optional equality block `h(x) = 0`, inequality
/// block `g(x) <= 0`, and variable box.
pub struct ConstrainedProblem {
    pub n: usize,
    pub objective: Box<dyn Objective>,
    pub eq: Option<Box<dyn VectorConstraint>>,
    pub ineq: Option<Box<dyn VectorConstraint>>,
    pub bounds: BoxBounds,
}

impl std::fmt::Debug for ConstrainedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstrainedProblem")
            .field("n", &self.n)
            .field("eq_dim", &self.eq_dim())
            .field("ineq_dim", &self.ineq_dim())
            .finish_non_exhaustive()
    }
}

impl ConstrainedProblem {
    /// Box-only problem (no general constraints).
    pub fn box_only(n: usize, objective: Box<dyn Objective>, bounds: BoxBounds) -> Result<Self> {
        Self::new(n, objective, None, None, bounds)
    }

    pub fn new(
        n: usize,
        objective: Box<dyn Objective>,
        eq: Option<Box<dyn VectorConstraint>>,
        ineq: Option<Box<dyn VectorConstraint>>,
        bounds: BoxBounds,
    ) -> Result<Self> {
        if bounds.len() != n {
            return Err(Error::Dimension {
                context: "ConstrainedProblem bounds",
                expected: n,
                got: bounds.len(),
            });
        }
        Ok(Self {
            n,
            objective,
            eq,
            ineq,
            bounds,
        })
    }

    pub fn eq_dim(&self) -> usize {
        self.eq.as_ref().map_or(0, |c| c.dim())
    }

    pub fn ineq_dim(&self) -> usize {
        self.ineq.as_ref().map_or(0, |c| c.dim())
    }
}

/// Lagrange multiplier estimates and the penalty parameter.
#[derive(Debug, Clone)]
pub struct Multipliers {
    /// Equality multipliers, one per row of `h`.
    pub lambda: DenseVector,
    /// Inequality multipliers, componentwise nonnegative.
    pub mu: DenseVector,
    /// Penalty parameter, positive.
    pub rho: f64,
}

impl Multipliers {
    pub fn zeros(m: usize, p: usize, rho: f64) -> Self {
        Self {
            lambda: DenseVector::zeros(m),
            mu: DenseVector::zeros(p),
            rho,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuglagConfig {
    /// Configuration of the inner box solver. Its `tol` acts as the final
    /// stationarity target; early outer rounds solve to the looser
    /// `max(inner.tol, 0.1 * violation)`.
    pub inner: SolverConfig,
    pub feas_tol: f64,
    pub max_outer: usize,
    pub rho0: f64,
    pub rho_factor: f64,
    pub rho_cap: f64,
}

impl Default for AuglagConfig {
    fn default() -> Self {
        Self {
            inner: SolverConfig::default(),
            feas_tol: 1e-6,
            max_outer: 100,
            rho0: 1.0,
            rho_factor: 2.0,
            rho_cap: 1e12,
        }
    }
}

impl AuglagConfig {
    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if self.feas_tol > 0.0 && self.rho_factor > 1.0 && self.rho0 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidData(
                "auglag config requires feas_tol > 0, rho_factor > 1, rho0 > 0".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuglagStatus {
    Converged,
    MaxOuter,
    InnerFailure,
}

impl std::fmt::Display for AuglagStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AuglagStatus::Converged => write!(f, "converged"),
            AuglagStatus::MaxOuter => write!(f, "max-outer"),
            AuglagStatus::InnerFailure => write!(f, "inner-failure"),
        }
    }
}

/// Outcome of one inner box solve, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct InnerReport {
    pub status: SolverStatus,
    pub iterations: usize,
    pub n_evals: usize,
    pub grad_ws_inf: f64,
    /// Stationarity tolerance this round was solved to.
    pub tol_used: f64,
}

#[derive(Debug, Clone)]
pub struct AuglagResult {
    pub x: DenseVector,
    pub multipliers: Multipliers,
    /// Objective value `f(x)` (not the augmented Lagrangian).
    pub f: f64,
    pub violation_inf: f64,
    pub kkt_stationarity_inf: f64,
    pub outer_iters: usize,
    pub status: AuglagStatus,
    pub inner_reports: Vec<InnerReport>,
}

impl AuglagResult {
    pub fn inner_iterations_total(&self) -> usize {
        self.inner_reports.iter().map(|r| r.iterations).sum()
    }
}

fn eval_block(
    block: &mut Option<Box<dyn VectorConstraint>>,
    x: &DenseVector,
) -> Result<DenseVector> {
    match block {
        None => Ok(DenseVector::zeros(0)),
        Some(c) => {
            let v = c.eval(x)?;
            if v.len() != c.dim() {
                return Err(Error::Dimension {
                    context: "constraint block",
                    expected: c.dim(),
                    got: v.len(),
                });
            }
            Ok(v)
        }
    }
}

/// Value and gradient of the augmented Lagrangian at `x`.
///
/// The shifted inequality residual `(g + mu/rho)_+` is formed once and used
/// for both the value and the gradient, so the two stay consistent at the
/// max kink.
pub fn auglag_value_grad(
    problem: &mut ConstrainedProblem,
    x: &DenseVector,
    mult: &Multipliers,
) -> Result<(f64, DenseVector)> {
    let (f, grad) = problem.objective.value_grad(x)?;
    let mut value = f;
    let mut grad = grad;
    let rho = mult.rho;

    if let Some(eq) = &mut problem.eq {
        let h = eq.eval(x)?;
        if h.len() != mult.lambda.len() {
            return Err(Error::Dimension {
                context: "auglag equality block",
                expected: mult.lambda.len(),
                got: h.len(),
            });
        }
        let shifted = zip_map(&h, &mult.lambda, |hi, li| hi + li / rho);
        value += 0.5 * rho * dot(&shifted, &shifted);
        let jtv = eq.jacobian_t_vec(x, &shifted)?;
        grad = add_scaled(&grad, &jtv, rho);
    }

    if let Some(ineq) = &mut problem.ineq {
        let g = ineq.eval(x)?;
        if g.len() != mult.mu.len() {
            return Err(Error::Dimension {
                context: "auglag inequality block",
                expected: mult.mu.len(),
                got: g.len(),
            });
        }
        let plus = zip_map(&g, &mult.mu, |gi, mi| (gi + mi / rho).max(0.0));
        value += 0.5 * rho * dot(&plus, &plus);
        let jtv = ineq.jacobian_t_vec(x, &plus)?;
        grad = add_scaled(&grad, &jtv, rho);
    }

    Ok((value, grad))
}

/// First-order multiplier update: `lambda += rho h`, `mu = (mu + rho g)_+`.
/// The penalty is unchanged here.
pub fn update_multipliers(
    mult: &Multipliers,
    h_val: &DenseVector,
    g_val: &DenseVector,
) -> Result<Multipliers> {
    if h_val.len() != mult.lambda.len() {
        return Err(Error::Dimension {
            context: "update_multipliers equality",
            expected: mult.lambda.len(),
            got: h_val.len(),
        });
    }
    if g_val.len() != mult.mu.len() {
        return Err(Error::Dimension {
            context: "update_multipliers inequality",
            expected: mult.mu.len(),
            got: g_val.len(),
        });
    }
    Ok(Multipliers {
        lambda: add_scaled(&mult.lambda, h_val, mult.rho),
        mu: zip_map(&mult.mu, g_val, |mi, gi| (mi + mult.rho * gi).max(0.0)),
        rho: mult.rho,
    })
}

/// `max(||h||_inf, ||g_+||_inf)`; zero for an unconstrained problem.
pub fn constraint_violation(h_val: &DenseVector, g_val: &DenseVector) -> f64 {
    let h_inf = h_val.inf_norm();
    let g_inf = map(g_val, |v| v.max(0.0)).inf_norm();
    h_inf.max(g_inf)
}

/// Doubles (by `rho_factor`) when the violation was not halved, otherwise
/// leaves `rho` unchanged; the result never exceeds `rho_cap`.
pub fn update_rho(rho: f64, v_prev: f64, v_now: f64, cfg: &AuglagConfig) -> f64 {
    if v_now > 0.5 * v_prev {
        (rho * cfg.rho_factor).min(cfg.rho_cap)
    } else {
        rho
    }
}

struct AuglagOracle<'a> {
    problem: &'a mut ConstrainedProblem,
    mult: &'a Multipliers,
}

impl Objective for AuglagOracle<'_> {
    fn value_grad(&mut self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        auglag_value_grad(self.problem, x, self.mult)
    }
}

/// KKT residuals `(stationarity_inf, violation_inf, complementarity_inf)`
/// at `(x, multipliers)`.
///
/// Stationarity `||grad f + Jh' lambda + Jg' mu||_inf` is measured only on
/// coordinates further than `eps_active` from both bounds; bound-active
/// coordinates carry an implicit bound multiplier and are excluded.
pub fn kkt_residuals(
    problem: &mut ConstrainedProblem,
    x: &DenseVector,
    mult: &Multipliers,
    eps_active: f64,
) -> Result<(f64, f64, f64)> {
    let (_, grad_f) = problem.objective.value_grad(x)?;
    let mut stat = grad_f;
    let h = eval_block(&mut problem.eq, x)?;
    if let Some(eq) = &mut problem.eq {
        let jtv = eq.jacobian_t_vec(x, &mult.lambda)?;
        stat = add_scaled(&stat, &jtv, 1.0);
    }
    let g = eval_block(&mut problem.ineq, x)?;
    if let Some(ineq) = &mut problem.ineq {
        let jtv = ineq.jacobian_t_vec(x, &mult.mu)?;
        stat = add_scaled(&stat, &jtv, 1.0);
    }

    let (l, u) = (problem.bounds.lower(), problem.bounds.upper());
    let mut stationarity = 0.0f64;
    for i in 0..x.len() {
        let interior = x[i] > l[i] + eps_active && x[i] < u[i] - eps_active;
        if interior {
            stationarity = stationarity.max(stat[i].abs());
        }
    }

    let violation = constraint_violation(&h, &g);
    let complementarity = zip_map(&mult.mu, &g, |mi, gi| mi * gi).inf_norm();
    Ok((stationarity, violation, complementarity))
}

/// Solves the constrained problem by the augmented Lagrangian loop.
pub fn solve(problem: &mut ConstrainedProblem, cfg: &AuglagConfig) -> Result<AuglagResult> {
    solve_observed(problem, cfg, &mut |_| {})
}

/// [`solve`] with an iteration observer threaded through every inner box
/// solve. Records with `iteration == 0` mark the start of a new inner run.
pub fn solve_observed(
    problem: &mut ConstrainedProblem,
    cfg: &AuglagConfig,
    observe: &mut dyn FnMut(&IterationRecord<'_>),
) -> Result<AuglagResult> {
    cfg.validate()?;
    let bounds = problem.bounds.clone();
    let x0 = clip_to_box(&DenseVector::zeros(problem.n), &bounds)?;
    let (m, p) = (problem.eq_dim(), problem.ineq_dim());

    // Without general constraints the loop degenerates to exactly one inner
    // solve of the raw objective.
    if m == 0 && p == 0 {
        let inner = minimize_observed(
            problem.objective.as_mut(),
            &bounds,
            &x0,
            &cfg.inner,
            observe,
        )?;
        return finish_unconstrained(problem, cfg, inner);
    }

    let mut x = x0;
    let mut mult = Multipliers::zeros(m, p, cfg.rho0);
    let h0 = eval_block(&mut problem.eq, &x)?;
    let g0 = eval_block(&mut problem.ineq, &x)?;
    let mut v_prev = constraint_violation(&h0, &g0);
    let mut status = AuglagStatus::MaxOuter;
    let mut inner_reports = Vec::new();
    let mut outer_iters = 0;
    let tight_tol = cfg.inner.tol.max(0.1 * cfg.feas_tol);
    // Inner solves that stall at floating-point resolution are not fatal
    // by themselves (multiplier updates change the subproblem), but a run
    // of them means nothing further can improve.
    let mut stalled_rounds = 0usize;
    const MAX_STALLED_ROUNDS: usize = 3;

    for _ in 0..cfg.max_outer {
        let tol_used = cfg.inner.tol.max(0.1 * v_prev);
        let mut inner_cfg = cfg.inner.clone();
        inner_cfg.tol = tol_used;
        // Warm start from the previous outer iterate; the inner solver
        // starts with an empty history since changed multipliers or rho
        // invalidate old curvature pairs.
        let inner = {
            let mut oracle = AuglagOracle {
                problem: &mut *problem,
                mult: &mult,
            };
            minimize_observed(&mut oracle, &bounds, &x, &inner_cfg, observe)?
        };
        outer_iters += 1;
        inner_reports.push(InnerReport {
            status: inner.status,
            iterations: inner.iterations,
            n_evals: inner.n_evals,
            grad_ws_inf: inner.grad_inf_norm_on_working_set,
            tol_used,
        });
        if inner.status == SolverStatus::LineSearchFailure {
            stalled_rounds += 1;
        } else {
            stalled_rounds = 0;
        }
        x = inner.x_star;

        let h = eval_block(&mut problem.eq, &x)?;
        let g = eval_block(&mut problem.ineq, &x)?;
        let v_now = constraint_violation(&h, &g);
        if v_now <= 0.9 * v_prev {
            // The multiplier loop is still making headway; inner stalls at
            // machine resolution do not end the run while that holds.
            stalled_rounds = 0;
        }
        mult = update_multipliers(&mult, &h, &g)?;

        if inner.status == SolverStatus::Converged
            && v_now <= cfg.feas_tol
            && tol_used <= tight_tol
        {
            status = AuglagStatus::Converged;
            break;
        }
        if stalled_rounds >= MAX_STALLED_ROUNDS {
            // The box solver is pinned at floating-point resolution.
            // Infeasible: genuinely failed. Feasible: out of precision to
            // certify stationarity at the requested tolerance.
            status = if v_now > cfg.feas_tol {
                AuglagStatus::InnerFailure
            } else {
                AuglagStatus::MaxOuter
            };
            break;
        }

        mult.rho = update_rho(mult.rho, v_prev, v_now, cfg);
        v_prev = v_now;
    }

    let (f, _) = problem.objective.value_grad(&x)?;
    let (stationarity, violation, _) = kkt_residuals(problem, &x, &mult, cfg.inner.eps_active)?;
    Ok(AuglagResult {
        x,
        multipliers: mult,
        f,
        violation_inf: violation,
        kkt_stationarity_inf: stationarity,
        outer_iters,
        status,
        inner_reports,
    })
}

fn finish_unconstrained(
    problem: &mut ConstrainedProblem,
    cfg: &AuglagConfig,
    inner: SolverResult,
) -> Result<AuglagResult> {
    let mult = Multipliers::zeros(0, 0, cfg.rho0);
    let (stationarity, violation, _) =
        kkt_residuals(problem, &inner.x_star, &mult, cfg.inner.eps_active)?;
    let status = match inner.status {
        SolverStatus::Converged => AuglagStatus::Converged,
        SolverStatus::MaxIters => AuglagStatus::MaxOuter,
        SolverStatus::LineSearchFailure => AuglagStatus::InnerFailure,
    };
    Ok(AuglagResult {
        x: inner.x_star,
        multipliers: mult,
        f: inner.f_star,
        violation_inf: violation,
        kkt_stationarity_inf: stationarity,
        outer_iters: 1,
        status,
        inner_reports: vec![InnerReport {
            status: inner.status,
            iterations: inner.iterations,
            n_evals: inner.n_evals,
            grad_ws_inf: inner.grad_inf_norm_on_working_set,
            tol_used: cfg.inner.tol,
        }],
    })
}

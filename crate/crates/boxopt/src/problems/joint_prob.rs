//! Joint probability distribution with prescribed marginals:
//!
//! ```text
//! min_P  <M, P> + lambda r(P)   s.t.  P 1 = u,  P' 1 = v,  P >= 0
//! ```
//!
//! with `r(P) = sum(P ⊙ log P)` (entropy, extended by 0 log 0 = 0) or
//! `r(P) = ||P||^2 / 2` (Gaussian). Variables are `vec(P)` in column-major
//! order.

use rand::Rng;

use crate::auglag::{ConstrainedProblem, FnConstraint};
use crate::error::{Error, Result};
use crate::kernels::{BoxBounds, DenseMatrix, DenseVector};
use crate::lbfgsb::Objective;

use super::seeded_rng;

/// Floor for the entropy adjoint `log(p) + 1`; `log` underflows below
/// exp(-745) in f64, and the pinned-at-zero coordinates need a finite
/// gradient.
pub const ENTROPY_ADJOINT_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    Entropy,
    Gaussian,
}

impl std::fmt::Display for Regularizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regularizer::Entropy => write!(f, "entropy"),
            Regularizer::Gaussian => write!(f, "gaussian"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointProbInstance {
    /// Row marginal, length m, nonnegative, sums to 1.
    pub u: DenseVector,
    /// Column marginal, length n, nonnegative, sums to 1.
    pub v: DenseVector,
    /// Cost matrix, m x n.
    pub cost: DenseMatrix,
    pub lambda: f64,
    pub regularizer: Regularizer,
}

impl JointProbInstance {
    pub fn new(
        u: DenseVector,
        v: DenseVector,
        cost: DenseMatrix,
        lambda: f64,
        regularizer: Regularizer,
    ) -> Result<Self> {
        if cost.rows() != u.len() || cost.cols() != v.len() {
            return Err(Error::Dimension {
                context: "joint probability cost matrix",
                expected: u.len(),
                got: cost.rows(),
            });
        }
        if lambda <= 0.0 {
            return Err(Error::InvalidData("lambda must be positive".into()));
        }
        for marginal in [&u, &v] {
            if marginal.iter().any(|&w| w < 0.0) {
                return Err(Error::InvalidData("marginals must be nonnegative".into()));
            }
            if (marginal.sum() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidData(format!(
                    "marginal sums to {}, expected 1 within 1e-12",
                    marginal.sum()
                )));
            }
        }
        Ok(Self {
            u,
            v,
            cost,
            lambda,
            regularizer,
        })
    }

    pub fn rows(&self) -> usize {
        self.u.len()
    }

    pub fn cols(&self) -> usize {
        self.v.len()
    }
}

fn normal_density(t: f64, mean: f64, sd: f64) -> f64 {
    let z = (t - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Discretized marginals on `n` uniform bins of `[0, 1]` (bin centers):
/// `u` a single Gaussian N(0.5, 0.12), `v` an equal-weight mixture of
/// N(0.3, 0.08) and N(0.75, 0.08); both normalized to sum 1. The mixture
/// constants are artifact choices.
pub fn gaussian_mixture_marginals(n: usize) -> (DenseVector, DenseVector) {
    assert!(n >= 2, "need at least two bins");
    let center = |i: usize| (i as f64 + 0.5) / n as f64;
    let mut u = DenseVector::from_fn(n, |i| normal_density(center(i), 0.5, 0.12));
    let mut v = DenseVector::from_fn(n, |i| {
        0.5 * normal_density(center(i), 0.3, 0.08) + 0.5 * normal_density(center(i), 0.75, 0.08)
    });
    for w in [&mut u, &mut v] {
        let total = w.sum();
        for i in 0..n {
            w[i] /= total;
        }
    }
    (u, v)
}

/// Outer-product cost `M_ij = phi(t_i) phi(t_j)` with `phi` the N(0.5, 0.12)
/// density on the bin grid, normalized so the largest entry is 1.
pub fn outer_product_cost(n: usize) -> DenseMatrix {
    let phi = DenseVector::from_fn(n, |i| normal_density((i as f64 + 0.5) / n as f64, 0.5, 0.12));
    let peak = phi.iter().fold(0.0f64, |a, &b| a.max(b));
    DenseMatrix::from_fn(n, n, |i, j| (phi[i] / peak) * (phi[j] / peak))
}

/// Data set 1: Gaussian/mixture marginals with the outer-product cost,
/// square (m = n).
pub fn gen_joint_dataset1(n: usize, lambda: f64, regularizer: Regularizer) -> Result<JointProbInstance> {
    let (u, v) = gaussian_mixture_marginals(n);
    JointProbInstance::new(u, v, outer_product_cost(n), lambda, regularizer)
}

/// Data set 2: marginals drawn uniformly from the unit interval and
/// normalized, cost uniform on `[0, 1]`, rectangular with `m = 2n`.
pub fn gen_joint_dataset2(
    n: usize,
    lambda: f64,
    regularizer: Regularizer,
    seed: u64,
) -> Result<JointProbInstance> {
    let m = 2 * n;
    let mut rng = seeded_rng(seed);
    let mut u = DenseVector::from_fn(m, |_| rng.gen::<f64>());
    let mut v = DenseVector::from_fn(n, |_| rng.gen::<f64>());
    for w in [&mut u, &mut v] {
        let total = w.sum();
        for i in 0..w.len() {
            w[i] /= total;
        }
    }
    let cost = DenseMatrix::from_fn(m, n, |_, _| rng.gen::<f64>());
    JointProbInstance::new(u, v, cost, lambda, regularizer)
}

struct JointProbObjective {
    cost: DenseMatrix,
    lambda: f64,
    regularizer: Regularizer,
}

impl Objective for JointProbObjective {
    fn value_grad(&mut self, z: &DenseVector) -> Result<(f64, DenseVector)> {
        let (m, n) = (self.cost.rows(), self.cost.cols());
        let lambda = self.lambda;
        let mut f = 0.0;
        let mut grad = DenseVector::zeros(m * n);
        for j in 0..n {
            for i in 0..m {
                let idx = j * m + i;
                let p = z[idx];
                if p < 0.0 {
                    return Err(Error::Domain(format!(
                        "joint probability entry ({i}, {j}) is negative: {p}"
                    )));
                }
                let mij = self.cost.get(i, j);
                match self.regularizer {
                    Regularizer::Entropy => {
                        // 0 log 0 = 0 continuous extension; the adjoint
                        // log(p) + 1 is clamped at the underflow floor.
                        let plogp = if p == 0.0 { 0.0 } else { p * p.ln() };
                        f += mij * p + lambda * plogp;
                        let adjoint = if p == 0.0 {
                            ENTROPY_ADJOINT_FLOOR
                        } else {
                            (p.ln() + 1.0).max(ENTROPY_ADJOINT_FLOOR)
                        };
                        grad[idx] = mij + lambda * adjoint;
                    }
                    Regularizer::Gaussian => {
                        f += mij * p + 0.5 * lambda * p * p;
                        grad[idx] = mij + lambda * p;
                    }
                }
            }
        }
        Ok((f, grad))
    }
}

/// Assembles the constrained problem over `vec(P)` (column-major): the
/// regularized transport objective, the stacked marginal equalities
/// `[P 1 - u; P' 1 - v]`, and the box `P >= 0`.
pub fn build_joint_prob(instance: &JointProbInstance) -> Result<ConstrainedProblem> {
    let (m, n) = (instance.rows(), instance.cols());
    let objective = JointProbObjective {
        cost: instance.cost.clone(),
        lambda: instance.lambda,
        regularizer: instance.regularizer,
    };

    let (u, v) = (instance.u.clone(), instance.v.clone());
    let eval = move |z: &DenseVector| {
        let mut h = DenseVector::zeros(m + n);
        for j in 0..n {
            let mut col_sum = 0.0;
            for i in 0..m {
                let p = z[j * m + i];
                h[i] += p;
                col_sum += p;
            }
            h[m + j] = col_sum - v[j];
        }
        for i in 0..m {
            h[i] -= u[i];
        }
        h
    };
    // d(row_i)/dP_ij = 1 and d(col_j)/dP_ij = 1, so
    // (J' w)_{ij} = w_row[i] + w_col[j].
    let jtv = move |_: &DenseVector, w: &DenseVector| {
        DenseVector::from_fn(m * n, |idx| {
            let (j, i) = (idx / m, idx % m);
            w[i] + w[m + j]
        })
    };

    ConstrainedProblem::new(
        m * n,
        Box::new(objective),
        Some(Box::new(FnConstraint::new(m + n, eval, jtv))),
        None,
        BoxBounds::non_negative(m * n),
    )
}

//! Binary classification with a group-fairness equality constraint:
//!
//! ```text
//! min_w  L_D(w) + lambda ||w||^2   s.t.  L_A(w) = L_B(w)
//! ```
//!
//! `L_D` is the mean logistic loss over the full data set; the group losses
//! in the constraint use either the same logistic loss (non-convex problem)
//! or the linear loss `mean(-y_i <w, x_i>)` (affine constraint, convex
//! problem).

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::auglag::{ConstrainedProblem, FnConstraint};
use crate::error::{Error, Result};
use crate::kernels::{self, BoxBounds, DenseMatrix, DenseVector, IndexSet};

use super::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintLoss {
    Logistic,
    Linear,
}

impl std::fmt::Display for ConstraintLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConstraintLoss::Logistic => write!(f, "logistic"),
            ConstraintLoss::Linear => write!(f, "linear"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FairnessInstance {
    /// Feature rows, m x d.
    pub features: DenseMatrix,
    /// Labels, exactly ±1, length m.
    pub labels: DenseVector,
    /// Row membership of the two groups; disjoint and both nonempty.
    pub group_a: IndexSet,
    pub group_b: IndexSet,
    pub lambda_reg: f64,
    pub constraint_loss: ConstraintLoss,
}

impl FairnessInstance {
    pub fn validate(&self) -> Result<()> {
        let m = self.features.rows();
        if self.labels.len() != m || self.group_a.len() != m || self.group_b.len() != m {
            return Err(Error::Dimension {
                context: "fairness instance",
                expected: m,
                got: self.labels.len(),
            });
        }
        if self.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(Error::InvalidData("labels must be exactly ±1".into()));
        }
        if (0..m).any(|i| self.group_a.contains(i) && self.group_b.contains(i)) {
            return Err(Error::InvalidData("groups must be disjoint".into()));
        }
        if self.group_a.count() == 0 || self.group_b.count() == 0 {
            return Err(Error::InvalidData("both groups must be nonempty".into()));
        }
        Ok(())
    }
}

/// `log(1 + exp(u))` without overflow for large |u|.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// `sigma(u) = 1 / (1 + exp(-u))` without overflow.
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Synthetic data with planted group bias: standard normal features, labels
/// from a random linear teacher plus noise plus a group-dependent shift, and
/// group membership correlated with the first feature. Deterministic per
/// seed (RNG order: features row-major, teacher vector, per-row group coin
/// and label noise).
pub fn gen_fairness(
    m: usize,
    d: usize,
    lambda_reg: f64,
    constraint_loss: ConstraintLoss,
    seed: u64,
) -> Result<FairnessInstance> {
    if m < 2 || d == 0 {
        return Err(Error::InvalidData(
            "fairness generator needs m >= 2 rows and d >= 1 features".into(),
        ));
    }
    let mut rng = seeded_rng(seed);
    let features = DenseMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let teacher = DenseVector::from_fn(d, |_| rng.sample::<f64, _>(StandardNormal));

    let mut in_a = vec![false; m];
    let mut labels = DenseVector::zeros(m);
    for i in 0..m {
        let coin: f64 = rng.gen();
        // Group A is over-represented among rows with a positive first
        // feature; this plants the dependence the constraint removes.
        in_a[i] = if features.get(i, 0) > 0.0 {
            coin < 0.8
        } else {
            coin < 0.2
        };
        let noise: f64 = rng.sample(StandardNormal);
        let shift = if in_a[i] { 0.4 } else { -0.4 };
        let score: f64 =
            (0..d).map(|j| features.get(i, j) * teacher[j]).sum::<f64>() + 0.3 * noise + shift;
        labels[i] = if score >= 0.0 { 1.0 } else { -1.0 };
    }
    // Groups must both be nonempty for the constraint to make sense.
    if !in_a.iter().any(|&b| b) {
        in_a[0] = true;
    }
    if in_a.iter().all(|&b| b) {
        in_a[0] = false;
    }

    let group_a = IndexSet::new(in_a.clone());
    let group_b = IndexSet::new(in_a.iter().map(|&b| !b).collect());
    let instance = FairnessInstance {
        features,
        labels,
        group_a,
        group_b,
        lambda_reg,
        constraint_loss,
    };
    instance.validate()?;
    Ok(instance)
}

/// Reads a dense CSV data set: the named columns carry the ±1 label and the
/// 0/1 group flag (1 = group A), every other column is a feature.
pub fn load_fairness_csv(
    path: &Path,
    label_col: usize,
    group_col: usize,
    lambda_reg: f64,
    constraint_loss: ConstraintLoss,
) -> Result<FairnessInstance> {
    let raw = kernels::io::load_matrix(path)?;
    let cols = raw.cols();
    if label_col >= cols || group_col >= cols || label_col == group_col {
        return Err(Error::InvalidData(format!(
            "label column {label_col} / group column {group_col} out of range for {cols} columns"
        )));
    }
    let m = raw.rows();
    let feature_cols: Vec<usize> = (0..cols)
        .filter(|&j| j != label_col && j != group_col)
        .collect();
    let features = DenseMatrix::from_fn(m, feature_cols.len(), |i, j| raw.get(i, feature_cols[j]));
    let labels = DenseVector::from_fn(m, |i| raw.get(i, label_col));
    let mut in_a = vec![false; m];
    for i in 0..m {
        match raw.get(i, group_col) {
            x if x == 1.0 => in_a[i] = true,
            x if x == 0.0 => in_a[i] = false,
            other => {
                return Err(Error::InvalidData(format!(
                    "row {i}: group column must be 0 or 1, got {other}"
                )))
            }
        }
    }
    let instance = FairnessInstance {
        features,
        labels,
        group_a: IndexSet::new(in_a.clone()),
        group_b: IndexSet::new(in_a.iter().map(|&b| !b).collect()),
        lambda_reg,
        constraint_loss,
    };
    instance.validate()?;
    Ok(instance)
}

/// Mean logistic loss and its gradient over the given rows.
fn logistic_loss_grad(
    features: &DenseMatrix,
    labels: &DenseVector,
    rows: &[usize],
    w: &DenseVector,
) -> (f64, DenseVector) {
    let d = features.cols();
    let inv = 1.0 / rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = DenseVector::zeros(d);
    for &i in rows {
        let t: f64 = (0..d).map(|j| features.get(i, j) * w[j]).sum();
        let y = labels[i];
        loss += softplus(-y * t);
        let factor = -y * sigmoid(-y * t);
        for j in 0..d {
            grad[j] += factor * features.get(i, j);
        }
    }
    (
        loss * inv,
        DenseVector::from_fn(d, |j| grad[j] * inv),
    )
}

/// Mean linear loss `mean(-y_i <w, x_i>)`; its gradient is constant.
fn linear_loss_grad_vector(
    features: &DenseMatrix,
    labels: &DenseVector,
    rows: &[usize],
) -> DenseVector {
    let d = features.cols();
    let inv = 1.0 / rows.len() as f64;
    DenseVector::from_fn(d, |j| {
        rows.iter()
            .map(|&i| -labels[i] * features.get(i, j))
            .sum::<f64>()
            * inv
    })
}

/// Builds the fairness-constrained logistic regression over `w` (no box).
pub fn build_fair_logreg(instance: &FairnessInstance) -> Result<ConstrainedProblem> {
    instance.validate()?;
    let d = instance.features.cols();
    let m = instance.features.rows();
    let all_rows: Vec<usize> = (0..m).collect();
    let rows_a: Vec<usize> = instance.group_a.members().collect();
    let rows_b: Vec<usize> = instance.group_b.members().collect();

    let features = instance.features.clone();
    let labels = instance.labels.clone();
    let lambda = instance.lambda_reg;
    let objective = move |w: &DenseVector| {
        let (loss, grad) = logistic_loss_grad(&features, &labels, &all_rows, w);
        let f = loss + lambda * kernels::dot(w, w);
        let g = DenseVector::from_fn(w.len(), |j| grad[j] + 2.0 * lambda * w[j]);
        (f, g)
    };

    let eq: Box<dyn crate::auglag::VectorConstraint> = match instance.constraint_loss {
        ConstraintLoss::Logistic => {
            let (fa, la) = (instance.features.clone(), instance.labels.clone());
            let (ra, rb) = (rows_a.clone(), rows_b.clone());
            let (fg, lg) = (instance.features.clone(), instance.labels.clone());
            let (ra2, rb2) = (rows_a, rows_b);
            Box::new(FnConstraint::new(
                1,
                move |w: &DenseVector| {
                    let (loss_a, _) = logistic_loss_grad(&fa, &la, &ra, w);
                    let (loss_b, _) = logistic_loss_grad(&fa, &la, &rb, w);
                    DenseVector::from(vec![loss_a - loss_b])
                },
                move |w: &DenseVector, v: &DenseVector| {
                    let (_, ga) = logistic_loss_grad(&fg, &lg, &ra2, w);
                    let (_, gb) = logistic_loss_grad(&fg, &lg, &rb2, w);
                    DenseVector::from_fn(w.len(), |j| v[0] * (ga[j] - gb[j]))
                },
            ))
        }
        ConstraintLoss::Linear => {
            // Affine constraint: h(w) = <c, w> with constant gradient c.
            let ca = linear_loss_grad_vector(&instance.features, &instance.labels, &rows_a);
            let cb = linear_loss_grad_vector(&instance.features, &instance.labels, &rows_b);
            let c = kernels::sub(&ca, &cb);
            let c_jtv = c.clone();
            Box::new(FnConstraint::new(
                1,
                move |w: &DenseVector| DenseVector::from(vec![kernels::dot(&c, w)]),
                move |_: &DenseVector, v: &DenseVector| {
                    DenseVector::from_fn(c_jtv.len(), |j| v[0] * c_jtv[j])
                },
            ))
        }
    };

    ConstrainedProblem::new(
        d,
        Box::new(objective),
        Some(eq),
        None,
        BoxBounds::unbounded(d),
    )
}

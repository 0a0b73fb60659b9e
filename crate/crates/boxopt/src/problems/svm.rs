//! Dual support vector machine with an RBF kernel:
//!
//! ```text
//! min_a  1/2 (a ⊙ y)' K (a ⊙ y) - sum(a)   s.t.  y'a = 0,  0 <= a <= c
//! ```
//!
//! On the box `a >= 0` the l1 term `||a||_1` equals `sum(a)`, which keeps
//! the objective smooth.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::auglag::{ConstrainedProblem, FnConstraint};
use crate::error::{Error, Result};
use crate::kernels::{dot, matvec, zip_map, BoxBounds, DenseMatrix, DenseVector};

use super::seeded_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmInstance {
    /// Symmetric positive semidefinite kernel matrix, n x n.
    pub kernel: DenseMatrix,
    /// Labels, exactly ±1.
    pub labels: DenseVector,
    /// Box upper bound on the dual variables.
    pub c: f64,
}

/// Gaussian kernel `K_ij = exp(-gamma ||x_i - x_j||^2)` over the rows of
/// `points`.
pub fn rbf_kernel(points: &DenseMatrix, gamma: f64) -> DenseMatrix {
    let n = points.rows();
    let mut k = DenseMatrix::zeros(n, n);
    for i in 0..n {
        k.set(i, i, 1.0);
        for j in 0..i {
            let (ri, rj) = (points.row(i), points.row(j));
            let sq: f64 = ri
                .iter()
                .zip(rj)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (-gamma * sq).exp();
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

/// Two Gaussian blobs in `dim` dimensions, the first half labeled +1 around
/// `+1.5/sqrt(dim)` per coordinate, the second half -1 around the mirror
/// point. Deterministic per seed.
pub fn gen_svm_blobs(n: usize, dim: usize, seed: u64) -> (DenseMatrix, DenseVector) {
    let mut rng = seeded_rng(seed);
    let offset = 1.5 / (dim as f64).sqrt();
    let half = n / 2;
    let points = DenseMatrix::from_fn(n, dim, |i, _| {
        let center = if i < half { offset } else { -offset };
        center + rng.sample::<f64, _>(StandardNormal)
    });
    let labels = DenseVector::from_fn(n, |i| if i < half { 1.0 } else { -1.0 });
    (points, labels)
}

/// Builds the dual SVM problem from raw points: kernelizes with the RBF
/// bandwidth `gamma`, then attaches the single equality `y'a = 0` and the
/// box `[0, c]`.
pub fn build_dual_svm(
    points: &DenseMatrix,
    labels: &DenseVector,
    gamma: f64,
    c: f64,
) -> Result<ConstrainedProblem> {
    if gamma <= 0.0 || c <= 0.0 {
        return Err(Error::InvalidData(format!(
            "svm requires gamma > 0 and c > 0, got gamma={gamma}, c={c}"
        )));
    }
    let instance = SvmInstance {
        kernel: rbf_kernel(points, gamma),
        labels: labels.clone(),
        c,
    };
    build_dual_svm_from_instance(&instance)
}

/// Same as [`build_dual_svm`] but starting from an explicit kernel matrix.
pub fn build_dual_svm_from_instance(instance: &SvmInstance) -> Result<ConstrainedProblem> {
    let n = instance.kernel.rows();
    if instance.kernel.cols() != n {
        return Err(Error::Dimension {
            context: "svm kernel",
            expected: n,
            got: instance.kernel.cols(),
        });
    }
    if instance.labels.len() != n {
        return Err(Error::Dimension {
            context: "svm labels",
            expected: n,
            got: instance.labels.len(),
        });
    }
    if instance.labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::InvalidData("svm labels must be exactly ±1".into()));
    }
    if instance.labels.iter().all(|&y| y == instance.labels[0]) {
        log::warn!("all svm labels share one sign; the dual problem is degenerate");
    }

    let k = instance.kernel.clone();
    let y = instance.labels.clone();
    let objective = move |a: &DenseVector| {
        let t = zip_map(a, &y, |ai, yi| ai * yi);
        let kt = matvec(&k, &t, false).expect("kernel shape");
        let f = 0.5 * dot(&t, &kt) - a.sum();
        let grad = DenseVector::from_fn(a.len(), |i| y[i] * kt[i] - 1.0);
        (f, grad)
    };

    let y_eq = instance.labels.clone();
    let y_jtv = instance.labels.clone();
    let eq = FnConstraint::new(
        1,
        move |a: &DenseVector| DenseVector::from(vec![dot(&y_eq, a)]),
        move |_: &DenseVector, w: &DenseVector| {
            DenseVector::from_fn(y_jtv.len(), |i| y_jtv[i] * w[0])
        },
    );

    ConstrainedProblem::new(
        n,
        Box::new(objective),
        Some(Box::new(eq)),
        None,
        BoxBounds::uniform(n, 0.0, instance.c)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auglag::{solve, AuglagConfig, AuglagStatus};
    use approx::assert_relative_eq;

    #[test]
    fn kernel_is_symmetric_with_unit_diagonal() {
        let (points, _) = gen_svm_blobs(20, 3, 7);
        let k = rbf_kernel(&points, 1.0);
        for i in 0..20 {
            assert_eq!(k.get(i, i), 1.0);
            for j in 0..20 {
                assert_eq!(k.get(i, j), k.get(j, i));
                assert!(k.get(i, j) > 0.0 && k.get(i, j) <= 1.0);
            }
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        let (p1, y1) = gen_svm_blobs(16, 2, 9);
        let (p2, y2) = gen_svm_blobs(16, 2, 9);
        assert_eq!(p1, p2);
        assert_eq!(y1, y2);
    }

    #[test]
    fn two_point_identity_kernel_by_hand() {
        // K = I, y = [+1, -1]: minimize (a1^2 + a2^2)/2 - a1 - a2 subject to
        // a1 = a2 in [0, 1], i.e. t^2 - 2t over t in [0, 1] -> a = [1, 1],
        // f = -1.
        let instance = SvmInstance {
            kernel: DenseMatrix::identity(2),
            labels: DenseVector::from(vec![1.0, -1.0]),
            c: 1.0,
        };
        let mut problem = build_dual_svm_from_instance(&instance).unwrap();
        let cfg = AuglagConfig::default();
        let res = solve(&mut problem, &cfg).unwrap();
        assert_eq!(res.status, AuglagStatus::Converged);
        assert_relative_eq!(res.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(res.x[1], 1.0, epsilon = 1e-5);
        assert_relative_eq!(res.f, -1.0, epsilon = 1e-6);
    }

    #[test]
    fn rejects_bad_labels() {
        let points = DenseMatrix::zeros(2, 2);
        let labels = DenseVector::from(vec![1.0, 0.5]);
        assert!(build_dual_svm(&points, &labels, 1.0, 1.0).is_err());
    }
}

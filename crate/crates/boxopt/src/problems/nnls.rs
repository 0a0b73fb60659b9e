//! Non-negative least squares: `min ||Ax - b||^2  s.t.  x >= 0`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{add_scaled, matvec, scale, sub, BoxBounds, DenseMatrix, DenseVector};
use crate::lbfgsb::Objective;

use super::seeded_rng;

/// Which synthetic data set to draw.
///
/// Kind I: `A` is `ceil(2000 t) x ceil(6000 t)` uniform on `[0, 1]`, the
/// planted solution has density 0.01, and `b = sqrt(0.003) A x + 0.003 z`.
/// Its Gram matrix is singular and the rows are not isotropic.
///
/// Kind II: `A` is `ceil(6000 t) x ceil(3000 t)` standard Gaussian, density
/// 0.1, and `b = sqrt(1/6000) A x + 0.003 z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnlsKind {
    I,
    II,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsInstance {
    pub a: DenseMatrix,
    pub b: DenseVector,
    /// Planted nonnegative solution (magnitudes of standard normal draws).
    pub x_true: DenseVector,
}

/// Draws a synthetic instance. Deterministic for a fixed `(kind, scale_t,
/// seed)` triple; the RNG is consumed in a fixed order (A row-major, support
/// indices, nonzero magnitudes, noise).
pub fn gen_nnls(kind: NnlsKind, scale_t: f64, seed: u64) -> Result<NnlsInstance> {
    if !(scale_t > 0.0) {
        return Err(Error::InvalidData(format!(
            "nnls scale parameter must be positive, got {scale_t}"
        )));
    }
    let (rows, cols, density, signal_scale) = match kind {
        NnlsKind::I => (
            (2000.0 * scale_t).ceil() as usize,
            (6000.0 * scale_t).ceil() as usize,
            0.01,
            0.003f64.sqrt(),
        ),
        NnlsKind::II => (
            (6000.0 * scale_t).ceil() as usize,
            (3000.0 * scale_t).ceil() as usize,
            0.1,
            (1.0 / 6000.0f64).sqrt(),
        ),
    };
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidData(
            "nnls scale parameter yields an empty matrix".into(),
        ));
    }

    let mut rng = seeded_rng(seed);
    let a = match kind {
        NnlsKind::I => {
            let data = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
            DenseMatrix::new(rows, cols, data)?
        }
        NnlsKind::II => {
            let data = (0..rows * cols)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            DenseMatrix::new(rows, cols, data)?
        }
    };

    let nnz = ((cols as f64 * density).round() as usize).max(1);
    let support = rand::seq::index::sample(&mut rng, cols, nnz);
    let mut x_true = DenseVector::zeros(cols);
    for idx in support.iter() {
        x_true[idx] = rng.sample::<f64, _>(StandardNormal).abs();
    }

    let signal = scale(&matvec(&a, &x_true, false)?, signal_scale);
    let noise = DenseVector::from_fn(rows, |_| rng.sample::<f64, _>(StandardNormal));
    let b = add_scaled(&signal, &noise, 0.003);

    Ok(NnlsInstance { a, b, x_true })
}

/// Objective `f(x) = ||Ax - b||^2` with gradient `2 A'(Ax - b)`.
pub struct NnlsObjective {
    a: DenseMatrix,
    b: DenseVector,
}

impl NnlsObjective {
    pub fn n(&self) -> usize {
        self.a.cols()
    }
}

impl Objective for NnlsObjective {
    fn value_grad(&mut self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        let r = sub(&matvec(&self.a, x, false)?, &self.b);
        let f = crate::kernels::dot(&r, &r);
        let grad = scale(&matvec(&self.a, &r, true)?, 2.0);
        Ok((f, grad))
    }
}

/// Pure box problem: the squared-residual objective and the bounds
/// `0 <= x < inf`. No general constraints.
pub fn build_nnls(instance: &NnlsInstance) -> (NnlsObjective, BoxBounds) {
    (
        NnlsObjective {
            a: instance.a.clone(),
            b: instance.b.clone(),
        },
        BoxBounds::non_negative(instance.a.cols()),
    )
}

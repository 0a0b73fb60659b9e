//! Dense double-precision vector and matrix kernels.
//!
//! Every operation here is a componentwise map, a reduction, or a
//! matrix–vector product: there is no sequential dependency between
//! coordinates, so each kernel has the shape of a data-parallel primitive.
//! This crate ships the mandatory sequential CPU backend; reductions
//! accumulate in a fixed order (index-ascending, row-major for matrices) so
//! results are reproducible bit for bit.
//!
//! All kernels are pure functions over immutable inputs and safe to call
//! concurrently from any number of threads.

pub mod io;

use crate::error::{Error, Result};

/// Contiguous vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; n] }
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            data: vec![value; n],
        }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            data: (0..n).map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// True when every entry is finite (rejects NaN and ±∞).
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn inf_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn norm2(&self) -> f64 {
        dot(self, self).sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for DenseVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(data: Vec<f64>) -> Self {
        Self::new(data)
    }
}

impl From<&[f64]> for DenseVector {
    fn from(data: &[f64]) -> Self {
        Self::new(data.to_vec())
    }
}

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data. Errors when the element count
    /// does not equal `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "DenseMatrix::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { data, rows, cols })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { data, rows, cols }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Row-major backing storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transposed(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Membership mask over coordinates `0..n`; `true` marks a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    mask: Vec<bool>,
}

impl IndexSet {
    pub fn new(mask: Vec<bool>) -> Self {
        Self { mask }
    }

    pub fn full(n: usize) -> Self {
        Self {
            mask: vec![true; n],
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            mask: vec![false; n],
        }
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> bool) -> Self {
        Self {
            mask: (0..n).map(f).collect(),
        }
    }

    /// Ambient dimension n (not the member count).
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    /// Indices of members in ascending order.
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }
}

/// Per-coordinate lower and upper bounds; entries may be ±∞ (IEEE infinities,
/// never sentinels).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: DenseVector,
    upper: DenseVector,
}

impl BoxBounds {
    /// Errors unless the vectors have equal length, no entry is NaN, and
    /// `lower[i] <= upper[i]` for every coordinate.
    pub fn new(lower: DenseVector, upper: DenseVector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension {
                context: "BoxBounds::new",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for i in 0..lower.len() {
            if lower[i].is_nan() || upper[i].is_nan() {
                return Err(Error::InvalidData(format!("NaN bound at coordinate {i}")));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidData(format!(
                    "lower bound {} exceeds upper bound {} at coordinate {i}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `(-inf, +inf)` in every coordinate.
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: DenseVector::filled(n, f64::NEG_INFINITY),
            upper: DenseVector::filled(n, f64::INFINITY),
        }
    }

    /// `[0, +inf)` in every coordinate.
    pub fn non_negative(n: usize) -> Self {
        Self {
            lower: DenseVector::zeros(n),
            upper: DenseVector::filled(n, f64::INFINITY),
        }
    }

    /// `[lo, hi]` in every coordinate.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(DenseVector::filled(n, lo), DenseVector::filled(n, hi))
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &DenseVector {
        &self.lower
    }

    pub fn upper(&self) -> &DenseVector {
        &self.upper
    }

    /// Exact feasibility test: `lower <= x <= upper` componentwise.
    pub fn contains(&self, x: &DenseVector) -> bool {
        x.len() == self.len()
            && (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    } else {
        Ok(())
    }
}

/// Componentwise projection of `x` onto the box. Infinite bounds are no-ops.
pub fn clip_to_box(x: &DenseVector, bounds: &BoxBounds) -> Result<DenseVector> {
    check_len("clip_to_box", bounds.len(), x.len())?;
    let l = bounds.lower();
    let u = bounds.upper();
    Ok(DenseVector::from_fn(x.len(), |i| x[i].max(l[i]).min(u[i])))
}

/// Dot product restricted to the member coordinates of `s`.
pub fn masked_dot(u: &DenseVector, v: &DenseVector, s: &IndexSet) -> Result<f64> {
    check_len("masked_dot", u.len(), v.len())?;
    check_len("masked_dot mask", u.len(), s.len())?;
    let mut acc = 0.0;
    for i in 0..u.len() {
        if s.contains(i) {
            acc += u[i] * v[i];
        }
    }
    Ok(acc)
}

/// Dense matrix–vector product `a * x`, or `a' * x` when `transpose` is set.
/// Accumulation order is fixed (ascending index over the contraction
/// dimension) for reproducibility.
pub fn matvec(a: &DenseMatrix, x: &DenseVector, transpose: bool) -> Result<DenseVector> {
    if transpose {
        check_len("matvec (transposed)", a.rows(), x.len())?;
        let mut out = vec![0.0; a.cols()];
        for i in 0..a.rows() {
            let row = a.row(i);
            let xi = x[i];
            for (o, aij) in out.iter_mut().zip(row) {
                *o += aij * xi;
            }
        }
        Ok(DenseVector::new(out))
    } else {
        check_len("matvec", a.cols(), x.len())?;
        let mut out = Vec::with_capacity(a.rows());
        for i in 0..a.rows() {
            let row = a.row(i);
            let mut acc = 0.0;
            for j in 0..a.cols() {
                acc += row[j] * x[j];
            }
            out.push(acc);
        }
        Ok(DenseVector::new(out))
    }
}

/// Dense matrix–matrix product `a * b` with the same fixed accumulation
/// order as [`matvec`] (ascending index over the contraction dimension).
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Dimension {
            context: "matmul",
            expected: a.cols(),
            got: b.rows(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(m, n);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..k {
                acc += arow[t] * b.get(t, j);
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}

/// Unmasked dot product; same accumulation order as [`masked_dot`] with a
/// full mask.
pub fn dot(u: &DenseVector, v: &DenseVector) -> f64 {
    assert_eq!(u.len(), v.len(), "dot: length mismatch");
    let mut acc = 0.0;
    for i in 0..u.len() {
        acc += u[i] * v[i];
    }
    acc
}

/// `u + alpha * v`.
pub fn add_scaled(u: &DenseVector, v: &DenseVector, alpha: f64) -> DenseVector {
    assert_eq!(u.len(), v.len(), "add_scaled: length mismatch");
    DenseVector::from_fn(u.len(), |i| u[i] + alpha * v[i])
}

/// `u + alpha * v` on member coordinates of `s`; `u` passes through elsewhere.
pub fn add_scaled_masked(u: &DenseVector, v: &DenseVector, alpha: f64, s: &IndexSet) -> DenseVector {
    assert_eq!(u.len(), v.len(), "add_scaled_masked: length mismatch");
    assert_eq!(u.len(), s.len(), "add_scaled_masked: mask length mismatch");
    DenseVector::from_fn(u.len(), |i| {
        if s.contains(i) {
            u[i] + alpha * v[i]
        } else {
            u[i]
        }
    })
}

pub fn sub(u: &DenseVector, v: &DenseVector) -> DenseVector {
    add_scaled(u, v, -1.0)
}

pub fn scale(u: &DenseVector, alpha: f64) -> DenseVector {
    DenseVector::from_fn(u.len(), |i| alpha * u[i])
}

/// Zeroes every coordinate outside `s`.
pub fn apply_mask(u: &DenseVector, s: &IndexSet) -> DenseVector {
    assert_eq!(u.len(), s.len(), "apply_mask: length mismatch");
    DenseVector::from_fn(u.len(), |i| if s.contains(i) { u[i] } else { 0.0 })
}

/// `max_{i in s} |u_i|`; 0 over the empty set.
pub fn masked_inf_norm(u: &DenseVector, s: &IndexSet) -> f64 {
    assert_eq!(u.len(), s.len(), "masked_inf_norm: length mismatch");
    let mut acc = 0.0f64;
    for i in 0..u.len() {
        if s.contains(i) {
            acc = acc.max(u[i].abs());
        }
    }
    acc
}

/// Squared Euclidean norm restricted to `s`.
pub fn masked_norm_sq(u: &DenseVector, s: &IndexSet) -> f64 {
    masked_dot(u, u, s).expect("masked_norm_sq: length mismatch")
}

/// Componentwise map.
pub fn map(u: &DenseVector, f: impl Fn(f64) -> f64) -> DenseVector {
    DenseVector::from_fn(u.len(), |i| f(u[i]))
}

/// Componentwise combination of two vectors.
pub fn zip_map(u: &DenseVector, v: &DenseVector, f: impl Fn(f64, f64) -> f64) -> DenseVector {
    assert_eq!(u.len(), v.len(), "zip_map: length mismatch");
    DenseVector::from_fn(u.len(), |i| f(u[i], v[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec3(a: f64, b: f64, c: f64) -> DenseVector {
        DenseVector::new(vec![a, b, c])
    }

    #[test]
    fn clip_componentwise() {
        let b = BoxBounds::uniform(3, 0.0, 1.0).unwrap();
        let r = clip_to_box(&vec3(-1.0, 0.5, 2.0), &b).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn clip_unbounded_identity() {
        let b = BoxBounds::unbounded(1);
        let r = clip_to_box(&DenseVector::new(vec![3.0]), &b).unwrap();
        assert_eq!(r.as_slice(), &[3.0]);
    }

    #[test]
    fn clip_both_sides_active() {
        let b = BoxBounds::new(
            DenseVector::new(vec![0.25, 0.0]),
            DenseVector::new(vec![1.0, 0.8]),
        )
        .unwrap();
        let r = clip_to_box(&DenseVector::new(vec![0.2, 0.9]), &b).unwrap();
        assert_eq!(r.as_slice(), &[0.25, 0.8]);
    }

    #[test]
    fn clip_length_mismatch_errors() {
        let b = BoxBounds::uniform(2, 0.0, 1.0).unwrap();
        assert!(clip_to_box(&vec3(0.0, 0.0, 0.0), &b).is_err());
    }

    #[test]
    fn masked_dot_direct_sum() {
        let u = vec3(1.0, 2.0, 3.0);
        let v = vec3(1.0, 1.0, 1.0);
        let s = IndexSet::new(vec![true, false, true]);
        assert_eq!(masked_dot(&u, &v, &s).unwrap(), 4.0);
    }

    #[test]
    fn masked_dot_empty_set() {
        let u = DenseVector::new(vec![2.0, 2.0]);
        let s = IndexSet::empty(2);
        assert_eq!(masked_dot(&u, &u, &s).unwrap(), 0.0);
    }

    #[test]
    fn masked_dot_matches_gather_oracle() {
        // Independent oracle: gather the masked entries into compact copies,
        // then take the dense dot of those copies.
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = 64;
        let u = DenseVector::from_fn(n, |_| next());
        let v = DenseVector::from_fn(n, |_| next());
        let s = IndexSet::from_fn(n, |_| next() > 0.0);
        let gathered_u: Vec<f64> = s.members().map(|i| u[i]).collect();
        let gathered_v: Vec<f64> = s.members().map(|i| v[i]).collect();
        let oracle: f64 = gathered_u
            .iter()
            .zip(&gathered_v)
            .map(|(a, b)| a * b)
            .sum();
        assert_eq!(masked_dot(&u, &v, &s).unwrap(), oracle);
    }

    #[test]
    fn matvec_identity() {
        let a = DenseMatrix::identity(2);
        let x = DenseVector::new(vec![3.0, 4.0]);
        assert_eq!(matvec(&a, &x, false).unwrap().as_slice(), &[3.0, 4.0]);
    }

    #[test]
    fn matvec_hand_computed() {
        let a = DenseMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = DenseVector::new(vec![1.0, 1.0]);
        assert_eq!(matvec(&a, &x, false).unwrap().as_slice(), &[3.0, 7.0]);
        assert_eq!(matvec(&a, &x, true).unwrap().as_slice(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_matches_matvec_on_columns() {
        let a = DenseMatrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.rows(), 2);
        assert_eq!(c.cols(), 2);
        for j in 0..2 {
            let col = DenseVector::from_fn(3, |i| b.get(i, j));
            let expect = matvec(&a, &col, false).unwrap();
            for i in 0..2 {
                assert_eq!(c.get(i, j).to_bits(), expect[i].to_bits());
            }
        }
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn matvec_shape_mismatch_errors() {
        let a = DenseMatrix::zeros(2, 3);
        let x = DenseVector::zeros(2);
        assert!(matvec(&a, &x, false).is_err());
        assert!(matvec(&a, &x, true).is_ok());
        assert!(matvec(&a, &DenseVector::zeros(3), true).is_err());
    }

    #[test]
    fn bounds_reject_inverted() {
        assert!(BoxBounds::new(
            DenseVector::new(vec![1.0]),
            DenseVector::new(vec![0.0])
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn clip_is_idempotent(xs in proptest::collection::vec(-10.0f64..10.0, 1..32)) {
            let n = xs.len();
            let x = DenseVector::new(xs);
            let b = BoxBounds::uniform(n, -1.0, 1.0).unwrap();
            let once = clip_to_box(&x, &b).unwrap();
            let twice = clip_to_box(&once, &b).unwrap();
            // Bit-exact idempotence.
            prop_assert_eq!(once.as_slice(), twice.as_slice());
        }

        #[test]
        fn masked_dot_full_mask_is_dot(
            pairs in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..64)
        ) {
            let u = DenseVector::new(pairs.iter().map(|p| p.0).collect());
            let v = DenseVector::new(pairs.iter().map(|p| p.1).collect());
            let full = IndexSet::full(u.len());
            // Identical summation order, so 0 ULP difference.
            prop_assert_eq!(masked_dot(&u, &v, &full).unwrap().to_bits(), dot(&u, &v).to_bits());
        }

        #[test]
        fn matvec_basis_extracts_columns(rows in 1usize..8, cols in 1usize..8, seed in 0u64..1000) {
            let mut state = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(1);
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let a = DenseMatrix::from_fn(rows, cols, |_, _| next());
            for j in 0..cols {
                let e = DenseVector::from_fn(cols, |k| if k == j { 1.0 } else { 0.0 });
                let col = matvec(&a, &e, false).unwrap();
                for i in 0..rows {
                    prop_assert_eq!(col[i].to_bits(), a.get(i, j).to_bits());
                }
            }
        }
    }
}

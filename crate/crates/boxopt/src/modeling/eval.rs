//! Forward evaluation and reverse-mode differentiation of the lowered DAG.
//!
//! Values are dense matrices (scalars 1x1, vectors n x 1). The forward pass
//! memoizes per node; the reverse pass walks node ids downward (lowering is
//! post-order, so descending ids are a reverse topological order) and
//! accumulates adjoints, summing over shared uses. Both passes use per-call
//! buffers, so one model may be evaluated from many threads concurrently.
//!
//! Matrix products and their adjoints go through the fixed-order kernels,
//! so linear-expression Jacobian products are bitwise equal to the
//! corresponding [`crate::kernels::matvec`] calls.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{matmul, DenseMatrix, DenseVector};

use super::ast::Span;
use super::ir::{Arena, Op};
use super::shape::Shape;

/// Floor for the `x log x` adjoint `log(x) + 1`; `exp(-745)` underflows to
/// zero in f64, and coordinates pinned at zero need a finite gradient.
pub const LOG_ADJOINT_FLOOR: f64 = -745.0;

/// Everything needed to evaluate one lowered model.
pub(crate) struct EvalModel {
    pub arena: Arena,
    pub shapes: Vec<Shape>,
    /// Parameter tensor per node (only `Op::Param` ids are populated).
    pub param_values: Vec<Option<Arc<DenseMatrix>>>,
    /// Variable slice per node (only `Op::Var` ids are populated):
    /// offset into the flat x and the variable's shape.
    pub var_slices: Vec<Option<(usize, Shape)>>,
    /// Length of the flat variable vector.
    pub total_len: usize,
}

pub(crate) struct Values(Vec<Option<Arc<DenseMatrix>>>);

impl Values {
    pub fn get(&self, id: usize) -> &DenseMatrix {
        self.0[id].as_deref().expect("value computed by forward pass")
    }
}

fn domain_err(span: Span, msg: String) -> Error {
    Error::Domain(format!("at {}:{}: {msg}", span.line, span.col))
}

/// Reads a variable slice out of the flat x in column-major order.
fn gather_var(x: &DenseVector, offset: usize, shape: Shape) -> DenseMatrix {
    DenseMatrix::from_fn(shape.rows, shape.cols, |i, j| x[offset + j * shape.rows + i])
}

fn scalar_of(m: &DenseMatrix) -> f64 {
    debug_assert_eq!(m.rows() * m.cols(), 1);
    m.as_slice()[0]
}

fn map_matrix(m: &DenseMatrix, f: impl Fn(f64) -> f64) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| f(m.get(i, j)))
}

fn zip_matrix(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    debug_assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| f(a.get(i, j), b.get(i, j)))
}

/// Elementwise combine with scalar broadcast on either side.
fn broadcast_zip(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    let a_scalar = a.rows() * a.cols() == 1;
    let b_scalar = b.rows() * b.cols() == 1;
    if a_scalar && !b_scalar {
        let av = scalar_of(a);
        map_matrix(b, |bv| f(av, bv))
    } else if b_scalar && !a_scalar {
        let bv = scalar_of(b);
        map_matrix(a, |av| f(av, bv))
    } else {
        zip_matrix(a, b, f)
    }
}

impl EvalModel {
    pub fn new_values(&self) -> Values {
        Values(vec![None; self.arena.len()])
    }

    /// Computes the value of `root` (and everything it depends on).
    pub fn forward(&self, root: usize, x: &DenseVector, values: &mut Values) -> Result<()> {
        if values.0[root].is_some() {
            return Ok(());
        }
        for child in self.arena.children(root) {
            self.forward(child, x, values)?;
        }
        let node = &self.arena.nodes[root];
        let span = node.span;
        let shape = self.shapes[root];
        let value = match &node.op {
            Op::Const(v) => {
                if shape.is_scalar() {
                    DenseMatrix::from_fn(1, 1, |_, _| *v)
                } else {
                    // Literal promoted by shape inference (ones-style
                    // broadcast constant).
                    DenseMatrix::from_fn(shape.rows, shape.cols, |_, _| *v)
                }
            }
            Op::Param(_) => {
                values.0[root] = Some(
                    self.param_values[root]
                        .clone()
                        .expect("parameter tensor populated at compile time"),
                );
                return Ok(());
            }
            Op::Var(_) => {
                let (offset, shape) = self.var_slices[root].expect("variable slice");
                gather_var(x, offset, shape)
            }
            Op::Neg(c) => map_matrix(values.get(*c), |v| -v),
            Op::Transpose(c) => values.get(*c).transposed(),
            Op::Add(a, b) => broadcast_zip(values.get(*a), values.get(*b), |x, y| x + y),
            Op::Sub(a, b) => broadcast_zip(values.get(*a), values.get(*b), |x, y| x - y),
            Op::ElemMul(a, b) => broadcast_zip(values.get(*a), values.get(*b), |x, y| x * y),
            Op::Mul { lhs, rhs } => {
                let (a, b) = (values.get(*lhs), values.get(*rhs));
                let a_scalar = a.rows() * a.cols() == 1;
                let b_scalar = b.rows() * b.cols() == 1;
                if a_scalar || b_scalar {
                    broadcast_zip(a, b, |x, y| x * y)
                } else {
                    matmul(a, b)?
                }
            }
            Op::Div(a, b) => {
                let divisor = scalar_of(values.get(*b));
                if divisor == 0.0 {
                    return Err(domain_err(span, "division by zero".into()));
                }
                map_matrix(values.get(*a), |v| v / divisor)
            }
            Op::Norm2(c) => {
                let m = values.get(*c);
                let mut acc = 0.0;
                for v in m.as_slice() {
                    acc += v * v;
                }
                DenseMatrix::from_fn(1, 1, |_, _| acc.sqrt())
            }
            Op::Sum(c) => {
                let m = values.get(*c);
                let mut acc = 0.0;
                for v in m.as_slice() {
                    acc += v;
                }
                DenseMatrix::from_fn(1, 1, |_, _| acc)
            }
            Op::Exp(c) => map_matrix(values.get(*c), f64::exp),
            Op::Log(c) => {
                let m = values.get(*c);
                if let Some(bad) = m.as_slice().iter().find(|v| **v <= 0.0) {
                    return Err(domain_err(span, format!("log of non-positive value {bad}")));
                }
                map_matrix(m, f64::ln)
            }
            Op::Log1p(c) => {
                let m = values.get(*c);
                if let Some(bad) = m.as_slice().iter().find(|v| **v <= -1.0) {
                    return Err(domain_err(span, format!("log1p of value {bad} <= -1")));
                }
                map_matrix(m, f64::ln_1p)
            }
            Op::XLogX(c) => {
                let m = values.get(*c);
                if let Some(bad) = m.as_slice().iter().find(|v| **v < 0.0) {
                    return Err(domain_err(
                        span,
                        format!("x*log(x) of negative value {bad}"),
                    ));
                }
                map_matrix(m, |v| if v == 0.0 { 0.0 } else { v * v.ln() })
            }
        };
        values.0[root] = Some(Arc::new(value));
        Ok(())
    }

    /// Propagates the adjoint `seed` at `root` back to the variables,
    /// accumulating into a gradient over the flat x. The forward pass for
    /// `root` must have run on `values`.
    pub fn reverse(&self, root: usize, seed: DenseMatrix, values: &Values) -> DenseVector {
        let mut adjoints: Vec<Option<DenseMatrix>> = vec![None; self.arena.len()];
        adjoints[root] = Some(seed);

        // Adds `delta` into the child's adjoint, sum-reducing when the
        // child is a broadcast scalar.
        let accumulate =
            |adjoints: &mut Vec<Option<DenseMatrix>>, child: usize, delta: DenseMatrix| {
                let child_shape = self.shapes[child];
                let reduced = if child_shape.is_scalar() && delta.rows() * delta.cols() != 1 {
                    let mut acc = 0.0;
                    for v in delta.as_slice() {
                        acc += v;
                    }
                    DenseMatrix::from_fn(1, 1, |_, _| acc)
                } else {
                    delta
                };
                match &mut adjoints[child] {
                    Some(existing) => {
                        let sum = zip_matrix(existing, &reduced, |a, b| a + b);
                        *existing = sum;
                    }
                    slot @ None => *slot = Some(reduced),
                }
            };

        for id in (0..self.arena.len()).rev() {
            let Some(grad) = adjoints[id].take() else {
                continue;
            };
            match &self.arena.nodes[id].op {
                Op::Const(_) | Op::Param(_) => {}
                Op::Var(_) => {
                    // Re-stash for the scatter below.
                    adjoints[id] = Some(grad);
                }
                Op::Neg(c) => accumulate(&mut adjoints, *c, map_matrix(&grad, |v| -v)),
                Op::Transpose(c) => accumulate(&mut adjoints, *c, grad.transposed()),
                Op::Add(a, b) => {
                    accumulate(&mut adjoints, *a, grad.clone());
                    accumulate(&mut adjoints, *b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adjoints, *a, grad.clone());
                    accumulate(&mut adjoints, *b, map_matrix(&grad, |v| -v));
                }
                Op::ElemMul(a, b) => {
                    let (va, vb) = (values.get(*a), values.get(*b));
                    accumulate(&mut adjoints, *a, broadcast_zip(&grad, vb, |g, y| g * y));
                    accumulate(&mut adjoints, *b, broadcast_zip(&grad, va, |g, x| g * x));
                }
                Op::Mul { lhs, rhs } => {
                    let (va, vb) = (values.get(*lhs), values.get(*rhs));
                    let a_scalar = va.rows() * va.cols() == 1;
                    let b_scalar = vb.rows() * vb.cols() == 1;
                    if a_scalar || b_scalar {
                        // Scaling: same adjoints as elementwise product
                        // with broadcast.
                        accumulate(&mut adjoints, *lhs, broadcast_zip(&grad, vb, |g, y| g * y));
                        accumulate(&mut adjoints, *rhs, broadcast_zip(&grad, va, |g, x| g * x));
                    } else {
                        let da = matmul(&grad, &vb.transposed()).expect("shapes checked");
                        let db = matmul(&va.transposed(), &grad).expect("shapes checked");
                        accumulate(&mut adjoints, *lhs, da);
                        accumulate(&mut adjoints, *rhs, db);
                    }
                }
                Op::Div(a, b) => {
                    let divisor = scalar_of(values.get(*b));
                    let va = values.get(*a);
                    accumulate(&mut adjoints, *a, map_matrix(&grad, |g| g / divisor));
                    let mut acc = 0.0;
                    for (g, x) in grad.as_slice().iter().zip(va.as_slice()) {
                        acc += g * x;
                    }
                    accumulate(
                        &mut adjoints,
                        *b,
                        DenseMatrix::from_fn(1, 1, |_, _| -acc / (divisor * divisor)),
                    );
                }
                Op::Norm2(c) => {
                    let r = scalar_of(values.get(id));
                    // Subgradient 0 at the origin.
                    if r != 0.0 {
                        let g = scalar_of(&grad) / r;
                        let vc = values.get(*c);
                        accumulate(&mut adjoints, *c, map_matrix(vc, |v| g * v));
                    }
                }
                Op::Sum(c) => {
                    let g = scalar_of(&grad);
                    let shape = self.shapes[*c];
                    accumulate(
                        &mut adjoints,
                        *c,
                        DenseMatrix::from_fn(shape.rows, shape.cols, |_, _| g),
                    );
                }
                Op::Exp(c) => {
                    let out = values.get(id);
                    accumulate(&mut adjoints, *c, zip_matrix(&grad, out, |g, e| g * e));
                }
                Op::Log(c) => {
                    let vc = values.get(*c);
                    accumulate(&mut adjoints, *c, zip_matrix(&grad, vc, |g, x| g / x));
                }
                Op::Log1p(c) => {
                    let vc = values.get(*c);
                    accumulate(
                        &mut adjoints,
                        *c,
                        zip_matrix(&grad, vc, |g, x| g / (1.0 + x)),
                    );
                }
                Op::XLogX(c) => {
                    let vc = values.get(*c);
                    accumulate(
                        &mut adjoints,
                        *c,
                        zip_matrix(&grad, vc, |g, x| {
                            let adj = if x == 0.0 {
                                LOG_ADJOINT_FLOOR
                            } else {
                                (x.ln() + 1.0).max(LOG_ADJOINT_FLOOR)
                            };
                            g * adj
                        }),
                    );
                }
            }
        }

        // Scatter variable adjoints into the flat gradient (column-major).
        let mut grad_out = DenseVector::zeros(self.total_len);
        for id in 0..self.arena.len() {
            if let (Some(adj), Some((offset, shape))) = (&adjoints[id], self.var_slices[id]) {
                for j in 0..shape.cols {
                    for i in 0..shape.rows {
                        grad_out[offset + j * shape.rows + i] += adj.get(i, j);
                    }
                }
            }
        }
        grad_out
    }
}

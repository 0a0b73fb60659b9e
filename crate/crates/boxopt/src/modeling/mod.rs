//! A small modeling language for constrained optimization.
//!
//! Model files declare parameters and variables, one `min` objective and an
//! optional `st` constraint list:
//!
//! ```text
//! parameters
//!   Matrix A
//!   Vector b
//! variables
//!   Vector x
//! min
//!   norm2(A*x-b)
//! st
//!   sum(x) == 1
//!   x >= 0
//! ```
//!
//! Supported operators: `+`, `-` (binary and unary), `*` (matrix product or
//! scalar scaling), `.*` (elementwise), `/` (by a scalar), postfix `'`
//! (transpose), `norm2` (Euclidean/Frobenius norm), `sum` (full reduction),
//! `exp`, `log`, `log1p` (elementwise), and numeric literals. `x .* log(x)`
//! is evaluated with the continuous extension 0 at x = 0 and a clamped
//! adjoint, so entropy objectives stay finite on the boundary of `x >= 0`.
//!
//! Numeric literals are scalars; when the scalar reading of `E * lit` does
//! not shape-check, the literal is reinterpreted as an all-ones vector, so
//! marginal sums can be written `P*1` and `P'*1`.
//!
//! Compilation flattens variables into one vector (declaration order,
//! column-major within matrices), absorbs `var >= c` / `var <= c`
//! constraints against numeric literals into the variable box, lowers `==`
//! blocks to equalities and `<=`/`>=` blocks to inequalities, and
//! differentiates everything by reverse-mode accumulation on the
//! expression DAG.

mod ast;
mod compile;
mod eval;
mod ir;
mod parser;
mod shape;

pub use ast::{Ast, BinOp, Constraint, Decl, Expr, Func, Kind, Relation, Role, Span};
pub use compile::{
    compile, compile_with_options, load_bindings, shape_check, CompileOptions, CompiledModel,
    ShapeEnv, Value, VariableSlice,
};
pub use eval::LOG_ADJOINT_FLOOR;
pub use parser::parse;
pub use shape::Shape;

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use approx::assert_relative_eq;

    use super::*;
    use crate::kernels::{DenseMatrix, DenseVector};

    const SIMPLEX_LSQ: &str = "\
parameters
  Matrix A
  Vector b
variables
  Vector x
min
  norm2(A*x-b)
st
  sum(x) == 1
  x >= 0
";

    fn identity_bindings() -> BTreeMap<String, Value> {
        let mut bindings = BTreeMap::new();
        bindings.insert("A".into(), Value::Matrix(DenseMatrix::identity(2)));
        bindings.insert("b".into(), Value::Vector(DenseVector::from(vec![2.0, 0.0])));
        bindings
    }

    #[test]
    fn shape_check_infers_from_matvec() {
        let ast = parse(SIMPLEX_LSQ).unwrap();
        let mut shapes = BTreeMap::new();
        shapes.insert("A".to_string(), Shape::matrix(3, 2));
        shapes.insert("b".to_string(), Shape::vector(3));
        let env = shape_check(&ast, &shapes).unwrap();
        assert_eq!(env.variables["x"], Shape::vector(2));
    }

    #[test]
    fn shape_conflict_reports_position() {
        let ast = parse(SIMPLEX_LSQ).unwrap();
        let mut shapes = BTreeMap::new();
        shapes.insert("A".to_string(), Shape::matrix(3, 2));
        shapes.insert("b".to_string(), Shape::vector(2));
        let err = shape_check(&ast, &shapes).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("dimension mismatch"), "{text}");
        assert!(text.contains("3 vs 2") || text.contains("2 vs 3"), "{text}");
    }

    #[test]
    fn sum_of_scaled_matrix_is_scalar() {
        let ast = parse("parameters Matrix P variables Scalar t min t + sum(P*1)").unwrap();
        let mut shapes = BTreeMap::new();
        shapes.insert("P".to_string(), Shape::matrix(4, 6));
        // The literal stays scalar here: sum() accepts the scaled matrix.
        let env = shape_check(&ast, &shapes).unwrap();
        assert_eq!(env.variables["t"], Shape::scalar());
    }

    #[test]
    fn marginal_products_promote_literals_to_ones() {
        let ast = parse(
            "parameters Vector u Vector v variables Matrix P \
             min sum(P .* P) st P * 1 == u P' * 1 == v",
        )
        .unwrap();
        let mut shapes = BTreeMap::new();
        shapes.insert("u".to_string(), Shape::vector(3));
        shapes.insert("v".to_string(), Shape::vector(5));
        let env = shape_check(&ast, &shapes).unwrap();
        assert_eq!(env.variables["P"], Shape::matrix(3, 5));
    }

    #[test]
    fn compile_simplex_model_structure() {
        let ast = parse(SIMPLEX_LSQ).unwrap();
        let (model, problem) = compile(&ast, &identity_bindings()).unwrap();
        assert_eq!(model.total_len(), 2);
        assert_eq!(model.eq_dim(), 1, "sum(x) == 1 is the only block");
        assert_eq!(model.ineq_dim(), 0, "x >= 0 absorbed into bounds");
        assert_eq!(model.bounds().lower().as_slice(), &[0.0, 0.0]);
        assert_eq!(problem.n, 2);
        assert!(problem.eq.is_some());
        assert!(problem.ineq.is_none());
    }

    #[test]
    fn compile_general_inequality_is_a_block() {
        let src = "\
parameters
  Matrix A
  Vector b
variables
  Vector x
min
  sum(x .* x)
st
  A*x <= b
";
        let ast = parse(src).unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert(
            "A".into(),
            Value::Matrix(DenseMatrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap()),
        );
        bindings.insert(
            "b".into(),
            Value::Vector(DenseVector::from(vec![1.0, 1.0, 1.5])),
        );
        let (model, problem) = compile(&ast, &bindings).unwrap();
        assert_eq!(model.ineq_dim(), 3);
        assert!(problem.ineq.is_some());
        assert!(model
            .bounds()
            .lower()
            .iter()
            .all(|&l| l == f64::NEG_INFINITY));
    }

    #[test]
    fn double_absorption_builds_unit_box() {
        let ast = parse(
            "parameters Vector c variables Vector x \
             min sum((x - c) .* (x - c)) st x >= 0 x <= 1",
        )
        .unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("c".into(), Value::Vector(DenseVector::from(vec![2.0, -1.0])));
        let (model, problem) = compile(&ast, &bindings).unwrap();
        assert_eq!(model.bounds().lower().as_slice(), &[0.0, 0.0]);
        assert_eq!(model.bounds().upper().as_slice(), &[1.0, 1.0]);
        assert_eq!(model.ineq_dim(), 0);
        assert!(problem.ineq.is_none());
    }

    #[test]
    fn eval_norm_gradient() {
        let ast = parse("parameters Vector c variables Vector x min norm2(x - c)").unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("c".into(), Value::Vector(DenseVector::zeros(2)));
        let (model, _) = compile(&ast, &bindings).unwrap();
        let (f, g) = model
            .eval_with_gradient(&DenseVector::from(vec![3.0, 4.0]))
            .unwrap();
        assert_relative_eq!(f, 5.0, epsilon = 1e-15);
        assert_relative_eq!(g[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn eval_sum_exp() {
        let ast =
            parse("parameters Vector c variables Vector x min sum(exp(x)) + sum(c .* x)").unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("c".into(), Value::Vector(DenseVector::zeros(2)));
        let (model, _) = compile(&ast, &bindings).unwrap();
        let (f, g) = model.eval_with_gradient(&DenseVector::zeros(2)).unwrap();
        assert_relative_eq!(f, 2.0, epsilon = 1e-15);
        assert_eq!(g.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn unanchored_variable_shape_is_an_error() {
        // x appears only under full reductions, so its length is genuinely
        // uninferable.
        let ast = parse("parameters Vector c variables Vector x min sum(exp(x)) + sum(c)").unwrap();
        let mut shapes = BTreeMap::new();
        shapes.insert("c".to_string(), Shape::vector(2));
        let err = shape_check(&ast, &shapes).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)), "{err}");
    }

    #[test]
    fn constraint_eval_sum_block() {
        let ast = parse(SIMPLEX_LSQ).unwrap();
        let (model, _) = compile(&ast, &identity_bindings()).unwrap();
        let x = DenseVector::from(vec![0.3, 0.3]);
        let (h, jhtv, g, jgtv) = model
            .constraint_eval(&x, &DenseVector::from(vec![1.0]), &DenseVector::zeros(0))
            .unwrap();
        assert_relative_eq!(h[0], -0.4, epsilon = 1e-15);
        assert_eq!(jhtv.as_slice(), &[1.0, 1.0]);
        assert_eq!(g.len(), 0);
        assert_eq!(jgtv.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn linear_block_jtv_is_exactly_matvec() {
        let src = "\
parameters
  Matrix A
  Vector b
variables
  Vector x
min
  sum(x)
st
  A*x - b == 0
";
        let ast = parse(src).unwrap();
        let a = DenseMatrix::new(3, 2, vec![1.5, -2.0, 0.25, 4.0, -1.0, 3.0]).unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("A".into(), Value::Matrix(a.clone()));
        bindings.insert("b".into(), Value::Vector(DenseVector::zeros(3)));
        let (model, _) = compile(&ast, &bindings).unwrap();
        let x = DenseVector::from(vec![0.7, -0.3]);
        let v = DenseVector::from(vec![2.0, -1.0, 0.5]);
        let (_, jhtv, _, _) = model
            .constraint_eval(&x, &v, &DenseVector::zeros(0))
            .unwrap();
        let direct = crate::kernels::matvec(&a, &v, true).unwrap();
        assert_eq!(jhtv[0].to_bits(), direct[0].to_bits());
        assert_eq!(jhtv[1].to_bits(), direct[1].to_bits());
    }

    #[test]
    fn entropy_guard_keeps_boundary_finite() {
        let ast = parse(
            "parameters Vector u variables Vector p \
             min sum(p .* log(p)) + sum(u .* p) st sum(p) == 1 p >= 0",
        )
        .unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("u".into(), Value::Vector(DenseVector::zeros(3)));
        let (model, _) = compile(&ast, &bindings).unwrap();
        let (f, g) = model.eval_with_gradient(&DenseVector::zeros(3)).unwrap();
        assert_eq!(f, 0.0);
        assert!(g.all_finite());
        assert_eq!(g[0], LOG_ADJOINT_FLOOR);
    }

    #[test]
    fn plain_log_at_zero_is_domain_error() {
        let ast = parse("parameters Vector u variables Vector p min sum(u .* log(p))").unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("u".into(), Value::Vector(DenseVector::from(vec![1.0, 1.0])));
        let (model, _) = compile(&ast, &bindings).unwrap();
        let err = model
            .eval_with_gradient(&DenseVector::zeros(2))
            .unwrap_err();
        assert!(matches!(err, crate::Error::Domain(_)), "{err}");
    }

    #[test]
    fn gradients_match_central_differences() {
        // One model per operator group, random interior points.
        let cases: Vec<(&str, Vec<(&str, Value)>, usize)> = vec![
            (
                "parameters Matrix A Vector b variables Vector x min norm2(A*x-b)",
                vec![
                    (
                        "A",
                        Value::Matrix(
                            DenseMatrix::new(3, 2, vec![1.0, 0.5, -0.25, 2.0, 0.75, -1.0])
                                .unwrap(),
                        ),
                    ),
                    ("b", Value::Vector(DenseVector::from(vec![0.3, -0.6, 0.9]))),
                ],
                2,
            ),
            (
                "parameters Vector c variables Vector x \
                 min sum(exp(x)) + sum(log1p(x .* x)) - sum(c .* x) / 2",
                vec![("c", Value::Vector(DenseVector::from(vec![0.4, -0.2, 1.1])))],
                3,
            ),
            (
                "parameters Matrix K Vector y variables Vector a \
                 min 0.5 * sum((a .* y) .* (K * (a .* y))) - sum(a)",
                vec![
                    (
                        "K",
                        Value::Matrix(DenseMatrix::new(2, 2, vec![1.0, 0.3, 0.3, 1.0]).unwrap()),
                    ),
                    ("y", Value::Vector(DenseVector::from(vec![1.0, -1.0]))),
                ],
                2,
            ),
            (
                "parameters Matrix M variables Matrix P \
                 min sum(M .* P) + 0.5 * sum(P .* log(P)) + norm2(P) * norm2(P)",
                vec![(
                    "M",
                    Value::Matrix(DenseMatrix::new(2, 2, vec![0.2, 0.8, 0.5, 0.1]).unwrap()),
                )],
                4,
            ),
            (
                "parameters Matrix X Vector y variables Vector w \
                 min sum(log1p(exp(-(X*w) .* y))) / 4 + 0.001 * sum(w .* w)",
                vec![
                    (
                        "X",
                        Value::Matrix(
                            DenseMatrix::new(4, 2, vec![0.5, -1.0, 1.5, 0.25, -0.75, 2.0, 1.0, 0.0])
                                .unwrap(),
                        ),
                    ),
                    (
                        "y",
                        Value::Vector(DenseVector::from(vec![1.0, -1.0, 1.0, -1.0])),
                    ),
                ],
                2,
            ),
        ];

        let mut state = 0x5deece66du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };

        for (src, binding_list, n) in cases {
            let ast = parse(src).unwrap();
            let bindings: BTreeMap<String, Value> = binding_list
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            let (model, _) = compile(&ast, &bindings).unwrap();
            assert_eq!(model.total_len(), n, "{src}");
            for _ in 0..20 {
                // Strictly positive points keep log away from its boundary.
                let x = DenseVector::from_fn(n, |_| 0.2 + next());
                let (_, grad) = model.eval_with_gradient(&x).unwrap();
                let h = 1e-6;
                for k in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[k] += h;
                    xm[k] -= h;
                    let (fp, _) = model.eval_with_gradient(&xp).unwrap();
                    let (fm, _) = model.eval_with_gradient(&xm).unwrap();
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (grad[k] - fd).abs() / grad[k].abs().max(1.0);
                    assert!(
                        rel <= 1e-6,
                        "{src}: coordinate {k}: analytic {} vs fd {fd}",
                        grad[k]
                    );
                }
            }
        }
    }

    #[test]
    fn flattening_is_a_bijection() {
        let ast = parse(
            "parameters Vector u Vector v variables Matrix P Vector q \
             min sum(P .* P) + sum(q .* v) st P * 1 == u P' * 1 == v",
        )
        .unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("u".into(), Value::Vector(DenseVector::from(vec![0.5, 0.5])));
        bindings.insert(
            "v".into(),
            Value::Vector(DenseVector::from(vec![0.3, 0.3, 0.4])),
        );
        let (model, _) = compile(&ast, &bindings).unwrap();
        assert_eq!(model.total_len(), 2 * 3 + 3);
        let p = model.variable_slice("P").unwrap();
        assert_eq!(p.offset, 0);
        assert_eq!(p.shape, Shape::matrix(2, 3));
        let q = model.variable_slice("q").unwrap();
        assert_eq!(q.offset, 6);
        assert_eq!(q.shape, Shape::vector(3));

        // Every flat coordinate belongs to exactly one (variable, row, col).
        let mut seen = vec![false; model.total_len()];
        for slice in model.variables() {
            for j in 0..slice.shape.cols {
                for i in 0..slice.shape.rows {
                    let idx = slice.offset + j * slice.shape.rows + i;
                    assert!(!seen[idx]);
                    seen[idx] = true;
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn unbound_parameter_is_reported() {
        let ast = parse(SIMPLEX_LSQ).unwrap();
        let mut bindings = BTreeMap::new();
        bindings.insert("A".into(), Value::Matrix(DenseMatrix::identity(2)));
        let err = compile(&ast, &bindings).unwrap_err();
        assert!(
            matches!(err, crate::Error::UnboundParameter(ref p) if p == "b"),
            "{err}"
        );
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let ast = parse(SIMPLEX_LSQ).unwrap();
        let mut bindings = identity_bindings();
        bindings.insert(
            "b".into(),
            Value::Vector(DenseVector::from(vec![f64::NAN, 0.0])),
        );
        assert!(compile(&ast, &bindings).is_err());
    }

    #[test]
    fn manifest_bindings_load_files_and_scalars() {
        let dir = tempfile::tempdir().unwrap();
        let a = DenseMatrix::identity(2);
        crate::kernels::io::write_dmat(&dir.path().join("A.dmat"), &a).unwrap();
        std::fs::write(dir.path().join("b.csv"), "2.0\n0.0\n").unwrap();
        std::fs::write(
            dir.path().join("data.json"),
            r#"{"A": "A.dmat", "b": "b.csv", "gamma": 0.5}"#,
        )
        .unwrap();
        let bindings = load_bindings(&dir.path().join("data.json")).unwrap();
        assert!(matches!(bindings["A"], Value::Matrix(_)));
        assert!(matches!(bindings["b"], Value::Vector(ref v) if v.len() == 2));
        assert!(matches!(bindings["gamma"], Value::Scalar(s) if s == 0.5));
    }
}

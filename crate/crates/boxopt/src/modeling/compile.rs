//! Compilation of a parsed model against bound parameter data.
//!
//! Compilation resolves shapes, lays the variables out in one flat vector
//! (column-major within matrix variables, declaration order across
//! variables), absorbs simple variable-vs-constant bound constraints into
//! the box, and wraps the lowered DAG into evaluators and a
//! [`ConstrainedProblem`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::auglag::{ConstrainedProblem, VectorConstraint};
use crate::error::{Error, Result};
use crate::kernels::{self, BoxBounds, DenseMatrix, DenseVector};
use crate::lbfgsb::Objective;

use super::ast::{Ast, Expr, Kind, Relation, Role};
use super::eval::{EvalModel, Values};
use super::ir::{lower, LoweredConstraint};
use super::shape::{infer, Shape};

/// Parameter data supplied to [`compile`].
#[derive(Debug, Clone)]
pub enum Value {
    Scalar(f64),
    Vector(DenseVector),
    Matrix(DenseMatrix),
}

impl Value {
    /// Normalizes to a dense matrix per the declared kind. Vectors must be
    /// a single column (a single row is accepted and reoriented).
    fn to_tensor(&self, name: &str, kind: Kind) -> Result<DenseMatrix> {
        let matrix = match self {
            Value::Scalar(v) => DenseMatrix::from_fn(1, 1, |_, _| *v),
            Value::Vector(v) => DenseMatrix::new(v.len(), 1, v.as_slice().to_vec())?,
            Value::Matrix(m) => m.clone(),
        };
        let matrix = match kind {
            Kind::Scalar => {
                if matrix.rows() * matrix.cols() != 1 {
                    return Err(Error::Shape(format!(
                        "parameter {name:?} is declared Scalar but bound to a {}x{} array",
                        matrix.rows(),
                        matrix.cols()
                    )));
                }
                matrix
            }
            Kind::Vector => {
                if matrix.cols() == 1 {
                    matrix
                } else if matrix.rows() == 1 {
                    matrix.transposed()
                } else {
                    return Err(Error::Shape(format!(
                        "parameter {name:?} is declared Vector but bound to a {}x{} matrix",
                        matrix.rows(),
                        matrix.cols()
                    )));
                }
            }
            Kind::Matrix => matrix,
        };
        if !matrix.all_finite() {
            return Err(Error::InvalidData(format!(
                "parameter {name:?} contains non-finite entries"
            )));
        }
        Ok(matrix)
    }
}

/// Resolved shapes of every parameter and variable.
#[derive(Debug, Clone)]
pub struct ShapeEnv {
    pub parameters: BTreeMap<String, Shape>,
    pub variables: BTreeMap<String, Shape>,
}

/// Infers all shapes from the parameter shapes alone (no data needed).
pub fn shape_check(ast: &Ast, parameter_shapes: &BTreeMap<String, Shape>) -> Result<ShapeEnv> {
    for decl in ast.parameters() {
        if !parameter_shapes.contains_key(&decl.name) {
            return Err(Error::UnboundParameter(decl.name.clone()));
        }
    }
    let lowered = lower(ast, &[]);
    let var_kinds: BTreeMap<String, Kind> = ast
        .variables()
        .map(|d| (d.name.clone(), d.kind))
        .collect();
    let shapes = infer(&lowered.arena, &var_kinds, parameter_shapes)?;
    Ok(ShapeEnv {
        parameters: parameter_shapes.clone(),
        variables: shapes.variables,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    /// Fold `var >= c` / `var <= c` constraints (against numeric literals)
    /// into the variable box instead of inequality blocks.
    pub absorb_bounds: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            absorb_bounds: true,
        }
    }
}

/// One variable's slot in the flat vector.
#[derive(Debug, Clone)]
pub struct VariableSlice {
    pub name: String,
    pub offset: usize,
    pub shape: Shape,
}

struct Block {
    root: usize,
    size: usize,
}

struct ModelInner {
    eval: EvalModel,
    objective_root: usize,
    eq_blocks: Vec<Block>,
    ineq_blocks: Vec<Block>,
    variables: Vec<VariableSlice>,
    bounds: BoxBounds,
}

/// A compiled model: immutable, cheap to clone, and evaluable from many
/// threads at once (evaluation state is per call).
#[derive(Clone)]
pub struct CompiledModel {
    inner: Arc<ModelInner>,
}

impl std::fmt::Debug for CompiledModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompiledModel")
            .field("total_len", &self.inner.eval.total_len)
            .field("variables", &self.inner.variables)
            .field("eq_dim", &self.eq_dim())
            .field("ineq_dim", &self.ineq_dim())
            .finish_non_exhaustive()
    }
}

enum AbsorbedBound {
    Lower(String, f64),
    Upper(String, f64),
}

/// Recognizes `x >= c`, `x <= c`, `c >= x`, `c <= x` with `x` a bare
/// variable and `c` a literal.
fn absorbable(ast: &Ast, c: &super::ast::Constraint) -> Option<AbsorbedBound> {
    let var_of = |e: &Expr| match e {
        Expr::Ident(name, _) => ast
            .decl(name)
            .filter(|d| d.role == Role::Variable)
            .map(|d| d.name.clone()),
        _ => None,
    };
    let num_of = |e: &Expr| match e {
        Expr::Number(v, _) => Some(*v),
        _ => None,
    };
    match c.rel {
        Relation::Eq => None,
        Relation::Ge => {
            if let (Some(var), Some(num)) = (var_of(&c.lhs), num_of(&c.rhs)) {
                Some(AbsorbedBound::Lower(var, num))
            } else if let (Some(num), Some(var)) = (num_of(&c.lhs), var_of(&c.rhs)) {
                Some(AbsorbedBound::Upper(var, num))
            } else {
                None
            }
        }
        Relation::Le => {
            if let (Some(var), Some(num)) = (var_of(&c.lhs), num_of(&c.rhs)) {
                Some(AbsorbedBound::Upper(var, num))
            } else if let (Some(num), Some(var)) = (num_of(&c.lhs), var_of(&c.rhs)) {
                Some(AbsorbedBound::Lower(var, num))
            } else {
                None
            }
        }
    }
}

/// Compiles with default options.
pub fn compile(
    ast: &Ast,
    bindings: &BTreeMap<String, Value>,
) -> Result<(CompiledModel, ConstrainedProblem)> {
    compile_with_options(ast, bindings, CompileOptions::default())
}

pub fn compile_with_options(
    ast: &Ast,
    bindings: &BTreeMap<String, Value>,
    options: CompileOptions,
) -> Result<(CompiledModel, ConstrainedProblem)> {
    // Bind and validate parameter data.
    let mut param_tensors: BTreeMap<String, Arc<DenseMatrix>> = BTreeMap::new();
    let mut parameter_shapes: BTreeMap<String, Shape> = BTreeMap::new();
    for decl in ast.parameters() {
        let value = bindings
            .get(&decl.name)
            .ok_or_else(|| Error::UnboundParameter(decl.name.clone()))?;
        let tensor = value.to_tensor(&decl.name, decl.kind)?;
        parameter_shapes.insert(decl.name.clone(), Shape::matrix(tensor.rows(), tensor.cols()));
        param_tensors.insert(decl.name.clone(), Arc::new(tensor));
    }

    // Split off bound-absorbable constraints.
    let mut skip = vec![false; ast.constraints.len()];
    let mut absorbed = Vec::new();
    if options.absorb_bounds {
        for (i, c) in ast.constraints.iter().enumerate() {
            if let Some(b) = absorbable(ast, c) {
                skip[i] = true;
                absorbed.push(b);
            }
        }
    }

    let lowered = lower(ast, &skip);
    let var_kinds: BTreeMap<String, Kind> = ast
        .variables()
        .map(|d| (d.name.clone(), d.kind))
        .collect();
    let shapes = infer(&lowered.arena, &var_kinds, &parameter_shapes)?;

    if !shapes.per_node[lowered.objective_root].is_scalar() {
        return Err(Error::Shape(format!(
            "objective must be scalar, inferred {}",
            shapes.per_node[lowered.objective_root]
        )));
    }

    // Flat layout: declaration order, column-major inside each variable.
    let mut variables = Vec::new();
    let mut offset = 0usize;
    for decl in ast.variables() {
        let shape = *shapes
            .variables
            .get(&decl.name)
            .ok_or_else(|| Error::Shape(format!("shape of variable {:?} unknown", decl.name)))?;
        variables.push(VariableSlice {
            name: decl.name.clone(),
            offset,
            shape,
        });
        offset += shape.len();
    }
    let total_len = offset;

    // Box from absorbed constraints (tightest wins when repeated).
    let mut lower_b = DenseVector::filled(total_len, f64::NEG_INFINITY);
    let mut upper_b = DenseVector::filled(total_len, f64::INFINITY);
    for bound in &absorbed {
        let (name, is_lower, value) = match bound {
            AbsorbedBound::Lower(n, v) => (n, true, *v),
            AbsorbedBound::Upper(n, v) => (n, false, *v),
        };
        let slice = variables
            .iter()
            .find(|v| &v.name == name)
            .expect("absorbed bound names a declared variable");
        for k in slice.offset..slice.offset + slice.shape.len() {
            if is_lower {
                lower_b[k] = lower_b[k].max(value);
            } else {
                upper_b[k] = upper_b[k].min(value);
            }
        }
    }
    let bounds = BoxBounds::new(lower_b, upper_b).map_err(|_| {
        Error::InvalidData("contradictory absorbed bounds (lower exceeds upper)".into())
    })?;

    // Node-indexed payloads for the evaluator.
    let n_nodes = lowered.arena.len();
    let mut param_values = vec![None; n_nodes];
    let mut var_slices = vec![None; n_nodes];
    for id in 0..n_nodes {
        match &lowered.arena.nodes[id].op {
            super::ir::Op::Param(name) => {
                param_values[id] = Some(param_tensors[name].clone());
            }
            super::ir::Op::Var(name) => {
                let slice = variables
                    .iter()
                    .find(|v| &v.name == name)
                    .expect("variable declared");
                var_slices[id] = Some((slice.offset, slice.shape));
            }
            _ => {}
        }
    }

    let collect_blocks = |relation: Relation| -> Vec<Block> {
        lowered
            .constraints
            .iter()
            .filter(|c| c.relation == relation)
            .map(|c: &LoweredConstraint| Block {
                root: c.root,
                size: shapes.per_node[c.root].len(),
            })
            .collect()
    };
    let eq_blocks = collect_blocks(Relation::Eq);
    let ineq_blocks = collect_blocks(Relation::Le);

    let inner = Arc::new(ModelInner {
        eval: EvalModel {
            arena: lowered.arena,
            shapes: shapes.per_node,
            param_values,
            var_slices,
            total_len,
        },
        objective_root: lowered.objective_root,
        eq_blocks,
        ineq_blocks,
        variables,
        bounds,
    });
    let model = CompiledModel { inner };
    let problem = model.problem()?;
    Ok((model, problem))
}

impl CompiledModel {
    /// Total length of the flat variable vector.
    pub fn total_len(&self) -> usize {
        self.inner.eval.total_len
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.inner.bounds
    }

    pub fn variables(&self) -> &[VariableSlice] {
        &self.inner.variables
    }

    pub fn variable_slice(&self, name: &str) -> Option<&VariableSlice> {
        self.inner.variables.iter().find(|v| v.name == name)
    }

    pub fn eq_dim(&self) -> usize {
        self.inner.eq_blocks.iter().map(|b| b.size).sum()
    }

    pub fn ineq_dim(&self) -> usize {
        self.inner.ineq_blocks.iter().map(|b| b.size).sum()
    }

    /// Objective value and gradient at the flat point `x`.
    pub fn eval_with_gradient(&self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        self.check_len(x)?;
        let inner = &self.inner;
        let mut values = inner.eval.new_values();
        inner.eval.forward(inner.objective_root, x, &mut values)?;
        let f = values.get(inner.objective_root).as_slice()[0];
        let seed = DenseMatrix::from_fn(1, 1, |_, _| 1.0);
        let grad = inner.eval.reverse(inner.objective_root, seed, &values);
        Ok((f, grad))
    }

    fn check_len(&self, x: &DenseVector) -> Result<()> {
        if x.len() != self.total_len() {
            return Err(Error::Dimension {
                context: "compiled model point",
                expected: self.total_len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn block_values(
        &self,
        blocks: &[Block],
        x: &DenseVector,
        values: &mut Values,
    ) -> Result<DenseVector> {
        let mut out = Vec::new();
        for b in blocks {
            self.inner.eval.forward(b.root, x, values)?;
            let m = values.get(b.root);
            // Column-major flattening, consistent with variable layout.
            for j in 0..m.cols() {
                for i in 0..m.rows() {
                    out.push(m.get(i, j));
                }
            }
        }
        Ok(DenseVector::new(out))
    }

    fn block_jtv(
        &self,
        blocks: &[Block],
        x: &DenseVector,
        v: &DenseVector,
        values: &mut Values,
    ) -> Result<DenseVector> {
        let mut out = DenseVector::zeros(self.total_len());
        let mut cursor = 0usize;
        for b in blocks {
            self.inner.eval.forward(b.root, x, values)?;
            let shape = self.inner.eval.shapes[b.root];
            let seed = DenseMatrix::from_fn(shape.rows, shape.cols, |i, j| {
                v[cursor + j * shape.rows + i]
            });
            cursor += b.size;
            let grad = self.inner.eval.reverse(b.root, seed, values);
            out = kernels::add_scaled(&out, &grad, 1.0);
        }
        Ok(out)
    }

    /// Residuals and transposed-Jacobian products for both constraint
    /// families: `(h, Jh'v_eq, g, Jg'v_ineq)`.
    pub fn constraint_eval(
        &self,
        x: &DenseVector,
        v_eq: &DenseVector,
        v_ineq: &DenseVector,
    ) -> Result<(DenseVector, DenseVector, DenseVector, DenseVector)> {
        self.check_len(x)?;
        if v_eq.len() != self.eq_dim() {
            return Err(Error::Dimension {
                context: "constraint_eval v_eq",
                expected: self.eq_dim(),
                got: v_eq.len(),
            });
        }
        if v_ineq.len() != self.ineq_dim() {
            return Err(Error::Dimension {
                context: "constraint_eval v_ineq",
                expected: self.ineq_dim(),
                got: v_ineq.len(),
            });
        }
        let mut values = self.inner.eval.new_values();
        let h = self.block_values(&self.inner.eq_blocks, x, &mut values)?;
        let jhtv = self.block_jtv(&self.inner.eq_blocks, x, v_eq, &mut values)?;
        let g = self.block_values(&self.inner.ineq_blocks, x, &mut values)?;
        let jgtv = self.block_jtv(&self.inner.ineq_blocks, x, v_ineq, &mut values)?;
        Ok((h, jhtv, g, jgtv))
    }

    /// Builds a fresh solvable problem over this model.
    pub fn problem(&self) -> Result<ConstrainedProblem> {
        let objective = ModelObjective {
            model: self.clone(),
        };
        let eq: Option<Box<dyn VectorConstraint>> = if self.eq_dim() > 0 {
            Some(Box::new(ModelBlocks {
                model: self.clone(),
                equalities: true,
            }))
        } else {
            None
        };
        let ineq: Option<Box<dyn VectorConstraint>> = if self.ineq_dim() > 0 {
            Some(Box::new(ModelBlocks {
                model: self.clone(),
                equalities: false,
            }))
        } else {
            None
        };
        ConstrainedProblem::new(
            self.total_len(),
            Box::new(objective),
            eq,
            ineq,
            self.inner.bounds.clone(),
        )
    }
}

struct ModelObjective {
    model: CompiledModel,
}

impl Objective for ModelObjective {
    fn value_grad(&mut self, x: &DenseVector) -> Result<(f64, DenseVector)> {
        self.model.eval_with_gradient(x)
    }
}

struct ModelBlocks {
    model: CompiledModel,
    equalities: bool,
}

impl ModelBlocks {
    fn blocks(&self) -> &[Block] {
        if self.equalities {
            &self.model.inner.eq_blocks
        } else {
            &self.model.inner.ineq_blocks
        }
    }
}

impl VectorConstraint for ModelBlocks {
    fn dim(&self) -> usize {
        self.blocks().iter().map(|b| b.size).sum()
    }

    fn eval(&mut self, x: &DenseVector) -> Result<DenseVector> {
        self.model.check_len(x)?;
        let mut values = self.model.inner.eval.new_values();
        self.model.block_values(self.blocks(), x, &mut values)
    }

    fn jacobian_t_vec(&mut self, x: &DenseVector, v: &DenseVector) -> Result<DenseVector> {
        self.model.check_len(x)?;
        if v.len() != self.dim() {
            return Err(Error::Dimension {
                context: "model constraint jtv",
                expected: self.dim(),
                got: v.len(),
            });
        }
        let mut values = self.model.inner.eval.new_values();
        self.model.block_jtv(self.blocks(), x, v, &mut values)
    }
}

/// Loads parameter bindings named by a JSON manifest: string entries are
/// DMAT1/CSV file paths relative to the manifest, numeric entries are
/// scalars.
pub fn load_bindings(manifest_path: &Path) -> Result<BTreeMap<String, Value>> {
    let text = std::fs::read_to_string(manifest_path)?;
    let json: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidData(format!("{}: {e}", manifest_path.display())))?;
    let obj = json.as_object().ok_or_else(|| {
        Error::InvalidData(format!(
            "{}: manifest must be a JSON object",
            manifest_path.display()
        ))
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for (name, entry) in obj {
        let value = match entry {
            serde_json::Value::String(rel) => {
                let m = kernels::io::load_matrix(&base.join(rel))?;
                if m.cols() == 1 && m.rows() > 1 {
                    Value::Vector(DenseVector::new(m.as_slice().to_vec()))
                } else {
                    Value::Matrix(m)
                }
            }
            serde_json::Value::Number(num) => Value::Scalar(num.as_f64().ok_or_else(|| {
                Error::InvalidData(format!("parameter {name:?}: non-finite scalar"))
            })?),
            other => {
                return Err(Error::InvalidData(format!(
                    "parameter {name:?}: manifest entries must be file names or numbers, got {other}"
                )))
            }
        };
        out.insert(name.clone(), value);
    }
    Ok(out)
}

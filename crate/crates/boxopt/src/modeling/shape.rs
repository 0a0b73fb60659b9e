//! Shape inference over the lowered DAG.
//!
//! Parameter shapes are known up front; variable shapes and the handful of
//! operator overloads are resolved by unification:
//!
//! * `+`, `-`, `.*` and relations accept equal shapes or a scalar on either
//!   side (the scalar broadcasts).
//! * `*` is scalar scaling when either operand is scalar, otherwise a
//!   matrix product.
//! * `/` requires a scalar divisor.
//!
//! Numeric literals default to scalars. When that reading makes a
//! constraint unsatisfiable, a literal standing as the right factor of a
//! product is retried as an all-ones vector, which turns `P * 1` into the
//! row-sum reduction; the repair picks the smallest set of such rewrites
//! that shape-checks. Undecidable broadcasts (all operand shapes still
//! unknown after propagation) default to exact shape agreement.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::ast::{Kind, Span};
use super::ir::{Arena, Op};

/// Concrete rows x cols extent; vectors are n x 1, scalars 1 x 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub fn vector(n: usize) -> Self {
        Shape { rows: n, cols: 1 }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

#[derive(Debug, Clone)]
struct Conflict {
    have: usize,
    want: usize,
    have_site: Option<Span>,
    want_site: Span,
}

/// Union-find over dimension slots; each class may carry a concrete value
/// and remembers where that value was imposed.
#[derive(Debug, Clone, Default)]
struct Dims {
    parent: Vec<usize>,
    value: Vec<Option<usize>>,
    site: Vec<Option<Span>>,
}

impl Dims {
    fn fresh(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.value.push(None);
        self.site.push(None);
        self.parent.len() - 1
    }

    fn find(&mut self, i: usize) -> usize {
        if self.parent[i] != i {
            let root = self.find(self.parent[i]);
            self.parent[i] = root;
        }
        self.parent[i]
    }

    fn get(&mut self, i: usize) -> Option<usize> {
        let r = self.find(i);
        self.value[r]
    }

    fn assign(&mut self, i: usize, v: usize, at: Span) -> std::result::Result<bool, Conflict> {
        let r = self.find(i);
        match self.value[r] {
            Some(cur) if cur == v => Ok(false),
            Some(cur) => Err(Conflict {
                have: cur,
                want: v,
                have_site: self.site[r],
                want_site: at,
            }),
            None => {
                self.value[r] = Some(v);
                self.site[r] = Some(at);
                Ok(true)
            }
        }
    }

    fn union(&mut self, a: usize, b: usize, at: Span) -> std::result::Result<bool, Conflict> {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return Ok(false);
        }
        match (self.value[ra], self.value[rb]) {
            (Some(x), Some(y)) if x != y => {
                return Err(Conflict {
                    have: x,
                    want: y,
                    have_site: self.site[ra],
                    want_site: self.site[rb].unwrap_or(at),
                })
            }
            _ => {}
        }
        let merged_value = self.value[ra].or(self.value[rb]);
        let merged_site = self.site[ra].or(self.site[rb]);
        self.parent[ra] = rb;
        self.value[rb] = merged_value;
        self.site[rb] = merged_site;
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Class {
    Scalar,
    NonScalar,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    /// Add/Sub/ElemMul node: scalar broadcast or exact match.
    Broadcast(usize),
    /// Mul node: scaling or matrix product.
    Product(usize),
}

pub(crate) struct InferredShapes {
    pub per_node: Vec<Shape>,
    pub variables: BTreeMap<String, Shape>,
}

struct Solver<'a> {
    arena: &'a Arena,
    var_kinds: &'a BTreeMap<String, Kind>,
    parameter_shapes: &'a BTreeMap<String, Shape>,
    ones_right: &'a [usize],
    dims: Dims,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl<'a> Solver<'a> {
    fn conflict_error(&self, node: usize, c: Conflict) -> Error {
        let span = self.arena.nodes[node].span;
        let earlier = c
            .have_site
            .map(|s| format!(" (earlier requirement at {}:{})", s.line, s.col))
            .unwrap_or_default();
        let _ = c.want_site;
        Error::Shape(format!(
            "at {}:{}: dimension mismatch: {} vs {}{}",
            span.line, span.col, c.have, c.want, earlier
        ))
    }

    fn classify(&mut self, node: usize) -> Class {
        let (r, c) = (self.rows[node], self.cols[node]);
        let rv = self.dims.get(r);
        let cv = self.dims.get(c);
        match (rv, cv) {
            (Some(1), Some(1)) => Class::Scalar,
            (Some(x), _) if x > 1 => Class::NonScalar,
            (_, Some(y)) if y > 1 => Class::NonScalar,
            _ => Class::Unknown,
        }
    }

    fn unify_nodes(&mut self, a: usize, b: usize, at_node: usize) -> Result<bool> {
        let span = self.arena.nodes[at_node].span;
        let mut progress = false;
        progress |= self
            .dims
            .union(self.rows[a], self.rows[b], span)
            .map_err(|c| self.conflict_error(at_node, c))?;
        progress |= self
            .dims
            .union(self.cols[a], self.cols[b], span)
            .map_err(|c| self.conflict_error(at_node, c))?;
        Ok(progress)
    }

    /// One resolution attempt; returns (resolved, made_progress).
    fn step(&mut self, pending: Pending, force_default: bool) -> Result<(bool, bool)> {
        match pending {
            Pending::Broadcast(node) => {
                let (a, b) = match self.arena.nodes[node].op {
                    Op::Add(a, b) | Op::Sub(a, b) | Op::ElemMul(a, b) => (a, b),
                    _ => unreachable!("broadcast pending on non-broadcast node"),
                };
                let (ca, cb) = (self.classify(a), self.classify(b));
                match (ca, cb) {
                    (Class::Scalar, _) => {
                        let p = self.unify_nodes(node, b, node)?;
                        Ok((true, p))
                    }
                    (_, Class::Scalar) => {
                        let p = self.unify_nodes(node, a, node)?;
                        Ok((true, p))
                    }
                    (Class::NonScalar, Class::NonScalar) => {
                        let mut p = self.unify_nodes(a, b, node)?;
                        p |= self.unify_nodes(node, a, node)?;
                        Ok((true, p))
                    }
                    (Class::NonScalar, Class::Unknown) if !force_default => {
                        // The output shape follows the non-scalar side either way.
                        let p = self.unify_nodes(node, a, node)?;
                        Ok((false, p))
                    }
                    (Class::Unknown, Class::NonScalar) if !force_default => {
                        let p = self.unify_nodes(node, b, node)?;
                        Ok((false, p))
                    }
                    _ if force_default => {
                        let mut p = self.unify_nodes(a, b, node)?;
                        p |= self.unify_nodes(node, a, node)?;
                        Ok((true, p))
                    }
                    _ => Ok((false, false)),
                }
            }
            Pending::Product(node) => {
                let (a, b) = match self.arena.nodes[node].op {
                    Op::Mul { lhs, rhs } => (lhs, rhs),
                    _ => unreachable!("product pending on non-mul node"),
                };
                let span = self.arena.nodes[node].span;
                let (ca, cb) = (self.classify(a), self.classify(b));
                match (ca, cb) {
                    (Class::Scalar, _) => {
                        let p = self.unify_nodes(node, b, node)?;
                        Ok((true, p))
                    }
                    (_, Class::Scalar) => {
                        let p = self.unify_nodes(node, a, node)?;
                        Ok((true, p))
                    }
                    (Class::NonScalar, Class::NonScalar) => {
                        let mut p = self
                            .dims
                            .union(self.cols[a], self.rows[b], span)
                            .map_err(|c| self.conflict_error(node, c))?;
                        p |= self
                            .dims
                            .union(self.rows[node], self.rows[a], span)
                            .map_err(|c| self.conflict_error(node, c))?;
                        p |= self
                            .dims
                            .union(self.cols[node], self.cols[b], span)
                            .map_err(|c| self.conflict_error(node, c))?;
                        Ok((true, p))
                    }
                    _ if force_default => {
                        let mut p = self
                            .dims
                            .union(self.cols[a], self.rows[b], span)
                            .map_err(|c| self.conflict_error(node, c))?;
                        p |= self
                            .dims
                            .union(self.rows[node], self.rows[a], span)
                            .map_err(|c| self.conflict_error(node, c))?;
                        p |= self
                            .dims
                            .union(self.cols[node], self.cols[b], span)
                            .map_err(|c| self.conflict_error(node, c))?;
                        Ok((true, p))
                    }
                    _ => Ok((false, false)),
                }
            }
        }
    }

    fn solve(mut self) -> Result<InferredShapes> {
        let n = self.arena.len();
        let mut pendings: Vec<Pending> = Vec::new();

        for id in 0..n {
            let span = self.arena.nodes[id].span;
            match &self.arena.nodes[id].op {
                Op::Const(_) => {
                    if self.ones_right.contains(&id) {
                        // Dimensions tied to the product below.
                        self.dims
                            .assign(self.cols[id], 1, span)
                            .map_err(|c| self.conflict_error(id, c))?;
                    } else {
                        self.dims
                            .assign(self.rows[id], 1, span)
                            .map_err(|c| self.conflict_error(id, c))?;
                        self.dims
                            .assign(self.cols[id], 1, span)
                            .map_err(|c| self.conflict_error(id, c))?;
                    }
                }
                Op::Param(name) => {
                    let shape = self.parameter_shapes.get(name).ok_or_else(|| {
                        Error::UnboundParameter(name.clone())
                    })?;
                    self.dims
                        .assign(self.rows[id], shape.rows, span)
                        .map_err(|c| self.conflict_error(id, c))?;
                    self.dims
                        .assign(self.cols[id], shape.cols, span)
                        .map_err(|c| self.conflict_error(id, c))?;
                }
                Op::Var(name) => match self.var_kinds.get(name) {
                    Some(Kind::Scalar) => {
                        self.dims
                            .assign(self.rows[id], 1, span)
                            .map_err(|c| self.conflict_error(id, c))?;
                        self.dims
                            .assign(self.cols[id], 1, span)
                            .map_err(|c| self.conflict_error(id, c))?;
                    }
                    Some(Kind::Vector) => {
                        self.dims
                            .assign(self.cols[id], 1, span)
                            .map_err(|c| self.conflict_error(id, c))?;
                    }
                    Some(Kind::Matrix) => {}
                    None => {
                        return Err(Error::Shape(format!(
                            "unknown variable {name:?} during shape inference"
                        )))
                    }
                },
                // Shape passes straight through.
                Op::Neg(c) | Op::Exp(c) | Op::Log(c) | Op::Log1p(c) | Op::XLogX(c) => {
                    let c = *c;
                    self.unify_nodes(id, c, id)?;
                }
                Op::Transpose(c) => {
                    let c = *c;
                    self.dims
                        .union(self.rows[id], self.cols[c], span)
                        .map_err(|e| self.conflict_error(id, e))?;
                    self.dims
                        .union(self.cols[id], self.rows[c], span)
                        .map_err(|e| self.conflict_error(id, e))?;
                }
                Op::Norm2(_) | Op::Sum(_) => {
                    self.dims
                        .assign(self.rows[id], 1, span)
                        .map_err(|c| self.conflict_error(id, c))?;
                    self.dims
                        .assign(self.cols[id], 1, span)
                        .map_err(|c| self.conflict_error(id, c))?;
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    self.dims
                        .assign(self.rows[b], 1, span)
                        .map_err(|c| self.conflict_error(id, c))?;
                    self.dims
                        .assign(self.cols[b], 1, span)
                        .map_err(|c| self.conflict_error(id, c))?;
                    self.unify_nodes(id, a, id)?;
                }
                Op::Add(..) | Op::Sub(..) | Op::ElemMul(..) => pendings.push(Pending::Broadcast(id)),
                Op::Mul { lhs, rhs } => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    if self.ones_right.contains(&rhs) {
                        // Forced matrix product against the ones vector.
                        self.dims
                            .union(self.cols[lhs], self.rows[rhs], span)
                            .map_err(|c| self.conflict_error(id, c))?;
                        self.dims
                            .union(self.rows[id], self.rows[lhs], span)
                            .map_err(|c| self.conflict_error(id, c))?;
                        self.dims
                            .union(self.cols[id], self.cols[rhs], span)
                            .map_err(|c| self.conflict_error(id, c))?;
                    } else {
                        pendings.push(Pending::Product(id));
                    }
                }
            }
        }

        // Propagate until each pending overload resolves; when a pass makes
        // no progress, force the exact-match/matmul default on the first
        // still-open item.
        while !pendings.is_empty() {
            let mut progress = false;
            let mut still = Vec::new();
            for p in pendings.iter().copied() {
                let (resolved, moved) = self.step(p, false)?;
                progress |= moved;
                if !resolved {
                    still.push(p);
                }
            }
            if still.is_empty() {
                break;
            }
            if !progress {
                let first = still[0];
                let (resolved, _) = self.step(first, true)?;
                debug_assert!(resolved);
                still.retain(|p| *p != first);
            }
            pendings = still;
        }

        // Everything must be concrete now.
        let mut per_node = Vec::with_capacity(n);
        for id in 0..n {
            let span = self.arena.nodes[id].span;
            let rows = self.dims.get(self.rows[id]);
            let cols = self.dims.get(self.cols[id]);
            match (rows, cols) {
                (Some(r), Some(c)) => per_node.push(Shape::matrix(r, c)),
                _ => {
                    return Err(Error::Shape(format!(
                        "at {}:{}: shape of this expression cannot be inferred",
                        span.line, span.col
                    )))
                }
            }
        }

        let mut variables = BTreeMap::new();
        for id in 0..n {
            if let Op::Var(name) = &self.arena.nodes[id].op {
                variables.insert(name.clone(), per_node[id]);
            }
        }
        for (name, kind) in self.var_kinds {
            if !variables.contains_key(name) {
                return Err(Error::Shape(format!(
                    "variable {name:?} ({kind}) is never used, so its shape cannot be inferred"
                )));
            }
        }

        Ok(InferredShapes {
            per_node,
            variables,
        })
    }
}

fn attempt(
    arena: &Arena,
    var_kinds: &BTreeMap<String, Kind>,
    parameter_shapes: &BTreeMap<String, Shape>,
    ones_right: &[usize],
) -> Result<InferredShapes> {
    let n = arena.len();
    let mut dims = Dims::default();
    let rows: Vec<usize> = (0..n).map(|_| dims.fresh()).collect();
    let cols: Vec<usize> = (0..n).map(|_| dims.fresh()).collect();

    // Occurrences of one shared Var/Param node already share dims by
    // construction (one node per name).
    Solver {
        arena,
        var_kinds,
        parameter_shapes,
        ones_right,
        dims,
        rows,
        cols,
    }
    .solve()
}

/// Literal nodes eligible for the all-ones reading: right factors of
/// products whose left side is not syntactically a literal.
fn ones_candidates(arena: &Arena) -> Vec<usize> {
    let mut out = Vec::new();
    for node in &arena.nodes {
        if let Op::Mul { lhs, rhs, .. } = node.op {
            if matches!(arena.nodes[rhs].op, Op::Const(_))
                && !matches!(arena.nodes[lhs].op, Op::Const(_))
            {
                out.push(rhs);
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Runs inference, retrying with all-ones literals when the scalar reading
/// conflicts. Returns per-node shapes and the chosen rewrites.
pub(crate) fn infer(
    arena: &Arena,
    var_kinds: &BTreeMap<String, Kind>,
    parameter_shapes: &BTreeMap<String, Shape>,
) -> Result<InferredShapes> {
    let first = attempt(arena, var_kinds, parameter_shapes, &[]);
    let Err(original) = first else {
        return first;
    };
    if matches!(original, Error::UnboundParameter(_)) {
        return Err(original);
    }

    let candidates = ones_candidates(arena);
    // Depth-first over candidate subsets, smallest first.
    fn search(
        arena: &Arena,
        var_kinds: &BTreeMap<String, Kind>,
        parameter_shapes: &BTreeMap<String, Shape>,
        candidates: &[usize],
        chosen: &mut Vec<usize>,
        from: usize,
    ) -> Option<InferredShapes> {
        for (offset, &cand) in candidates.iter().enumerate().skip(from) {
            chosen.push(cand);
            if let Ok(found) = attempt(arena, var_kinds, parameter_shapes, chosen) {
                return Some(found);
            }
            if let Some(found) = search(
                arena,
                var_kinds,
                parameter_shapes,
                candidates,
                chosen,
                offset + 1,
            ) {
                return Some(found);
            }
            chosen.pop();
        }
        None
    }

    let mut chosen = Vec::new();
    match search(
        arena,
        var_kinds,
        parameter_shapes,
        &candidates,
        &mut chosen,
        0,
    ) {
        Some(found) => Ok(found),
        None => Err(original),
    }
}

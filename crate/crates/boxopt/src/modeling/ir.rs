//! Flattened expression DAG shared by shape inference and evaluation.
//!
//! Lowering performs two rewrites: identifier nodes are shared (one node
//! per name, so reverse-mode accumulation sums over all uses), and the
//! pattern `E .* log(E)` fuses into a single `XLogX` node carrying the
//! continuous extension 0 log 0 = 0 and a clamped adjoint.

use std::collections::HashMap;

use super::ast::{Ast, BinOp, Constraint, Expr, Func, Relation, Span};

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Const(f64),
    Param(String),
    Var(String),
    Neg(usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul { lhs: usize, rhs: usize },
    ElemMul(usize, usize),
    Div(usize, usize),
    Norm2(usize),
    Sum(usize),
    Exp(usize),
    Log(usize),
    Log1p(usize),
    XLogX(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub op: Op,
    pub span: Span,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Arena {
    pub nodes: Vec<Node>,
}

impl Arena {
    fn push(&mut self, op: Op, span: Span) -> usize {
        self.nodes.push(Node { op, span });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Children of a node, for generic traversals.
    pub fn children(&self, id: usize) -> Vec<usize> {
        match &self.nodes[id].op {
            Op::Const(_) | Op::Param(_) | Op::Var(_) => vec![],
            Op::Neg(c)
            | Op::Transpose(c)
            | Op::Norm2(c)
            | Op::Sum(c)
            | Op::Exp(c)
            | Op::Log(c)
            | Op::Log1p(c)
            | Op::XLogX(c) => vec![*c],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul { lhs: a, rhs: b }
            | Op::ElemMul(a, b)
            | Op::Div(a, b) => vec![*a, *b],
        }
    }
}

/// One lowered constraint: the residual expression (`lhs - rhs`, flipped
/// for `>=`) and whether it is an equality.
#[derive(Debug, Clone)]
pub(crate) struct LoweredConstraint {
    pub root: usize,
    pub relation: Relation,
}

#[derive(Debug)]
pub(crate) struct Lowered {
    pub arena: Arena,
    pub objective_root: usize,
    pub constraints: Vec<LoweredConstraint>,
}

struct LowerCtx {
    arena: Arena,
    idents: HashMap<String, usize>,
    param_names: Vec<String>,
}

impl LowerCtx {
    fn lower_expr(&mut self, expr: &Expr) -> usize {
        match expr {
            Expr::Number(v, span) => self.arena.push(Op::Const(*v), *span),
            Expr::Ident(name, span) => {
                if let Some(&id) = self.idents.get(name) {
                    return id;
                }
                let op = if self.param_names.iter().any(|p| p == name) {
                    Op::Param(name.clone())
                } else {
                    Op::Var(name.clone())
                };
                let id = self.arena.push(op, *span);
                self.idents.insert(name.clone(), id);
                id
            }
            Expr::Neg(inner, span) => {
                let c = self.lower_expr(inner);
                self.arena.push(Op::Neg(c), *span)
            }
            Expr::Transpose(inner, span) => {
                let c = self.lower_expr(inner);
                self.arena.push(Op::Transpose(c), *span)
            }
            Expr::Call(func, arg, span) => {
                let c = self.lower_expr(arg);
                let op = match func {
                    Func::Norm2 => Op::Norm2(c),
                    Func::Sum => Op::Sum(c),
                    Func::Exp => Op::Exp(c),
                    Func::Log => Op::Log(c),
                    Func::Log1p => Op::Log1p(c),
                };
                self.arena.push(op, *span)
            }
            Expr::Binary(op, lhs, rhs, span) => {
                if *op == BinOp::ElemMul {
                    // E .* log(E) and log(E) .* E fuse to x log x.
                    if let Expr::Call(Func::Log, inner, _) = rhs.as_ref() {
                        if inner.structurally_eq(lhs) {
                            let c = self.lower_expr(lhs);
                            return self.arena.push(Op::XLogX(c), *span);
                        }
                    }
                    if let Expr::Call(Func::Log, inner, _) = lhs.as_ref() {
                        if inner.structurally_eq(rhs) {
                            let c = self.lower_expr(rhs);
                            return self.arena.push(Op::XLogX(c), *span);
                        }
                    }
                }
                let a = self.lower_expr(lhs);
                let b = self.lower_expr(rhs);
                let op = match op {
                    BinOp::Add => Op::Add(a, b),
                    BinOp::Sub => Op::Sub(a, b),
                    BinOp::Mul => Op::Mul { lhs: a, rhs: b },
                    BinOp::ElemMul => Op::ElemMul(a, b),
                    BinOp::Div => Op::Div(a, b),
                };
                self.arena.push(op, *span)
            }
        }
    }

    fn lower_constraint(&mut self, c: &Constraint) -> LoweredConstraint {
        let (first, second) = match c.rel {
            // lhs >= rhs  <=>  rhs - lhs <= 0
            Relation::Ge => (&c.rhs, &c.lhs),
            _ => (&c.lhs, &c.rhs),
        };
        let a = self.lower_expr(first);
        let b = self.lower_expr(second);
        let root = self.arena.push(Op::Sub(a, b), c.span);
        LoweredConstraint {
            root,
            relation: if c.rel == Relation::Eq {
                Relation::Eq
            } else {
                Relation::Le
            },
        }
    }
}

/// Lowers the whole model into one arena. `skip` marks constraint indices
/// that are handled elsewhere (bound absorption) and must not produce
/// residual blocks.
pub(crate) fn lower(ast: &Ast, skip: &[bool]) -> Lowered {
    let mut ctx = LowerCtx {
        arena: Arena::default(),
        idents: HashMap::new(),
        param_names: ast.parameters().map(|d| d.name.clone()).collect(),
    };
    let objective_root = ctx.lower_expr(&ast.objective);
    let mut constraints = Vec::new();
    for (i, c) in ast.constraints.iter().enumerate() {
        if !skip.get(i).copied().unwrap_or(false) {
            constraints.push(ctx.lower_constraint(c));
        }
    }
    Lowered {
        arena: ctx.arena,
        objective_root,
        constraints,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modeling::parser::parse;

    #[test]
    fn identifiers_are_shared() {
        let ast = parse("variables Vector x min sum(x .* x) st x >= 0").unwrap();
        let lowered = lower(&ast, &[false]);
        let vars = lowered
            .arena
            .nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Var(_)))
            .count();
        assert_eq!(vars, 1);
    }

    #[test]
    fn entropy_pattern_fuses() {
        let ast = parse("variables Matrix P min sum(P .* log(P))").unwrap();
        let lowered = lower(&ast, &[]);
        assert!(lowered
            .arena
            .nodes
            .iter()
            .any(|n| matches!(n.op, Op::XLogX(_))));
        assert!(!lowered
            .arena
            .nodes
            .iter()
            .any(|n| matches!(n.op, Op::Log(_))));

        // Mirror order fuses too.
        let ast = parse("variables Matrix P min sum(log(P) .* P)").unwrap();
        let lowered = lower(&ast, &[]);
        assert!(lowered
            .arena
            .nodes
            .iter()
            .any(|n| matches!(n.op, Op::XLogX(_))));
    }

    #[test]
    fn unfused_log_survives() {
        let ast = parse("variables Vector x Vector y min sum(x .* log(y))").unwrap();
        let lowered = lower(&ast, &[]);
        assert!(lowered
            .arena
            .nodes
            .iter()
            .any(|n| matches!(n.op, Op::Log(_))));
    }

    #[test]
    fn ge_constraints_are_flipped() {
        let ast = parse("variables Vector x min sum(x) st 1 >= sum(x)").unwrap();
        let lowered = lower(&ast, &[false]);
        let c = &lowered.constraints[0];
        assert_eq!(c.relation, Relation::Le);
        // Residual is sum(x) - 1.
        match &lowered.arena.nodes[c.root].op {
            Op::Sub(a, _b) => {
                assert!(matches!(lowered.arena.nodes[*a].op, Op::Sum(_)));
            }
            other => panic!("expected Sub, got {other:?}"),
        }
    }
}

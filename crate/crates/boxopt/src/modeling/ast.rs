//! Abstract syntax of the modeling language.

use std::fmt;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl Span {
    pub(crate) fn start() -> Self {
        Span { line: 1, col: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Matrix,
    Vector,
    Scalar,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Matrix => write!(f, "Matrix"),
            Kind::Vector => write!(f, "Vector"),
            Kind::Scalar => write!(f, "Scalar"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Variable,
}

#[derive(Debug, Clone)]
pub struct Decl {
    pub name: String,
    pub kind: Kind,
    pub role: Role,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::Eq => write!(f, "=="),
            Relation::Le => write!(f, "<="),
            Relation::Ge => write!(f, ">="),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    ElemMul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Norm2,
    Sum,
    Exp,
    Log,
    Log1p,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Norm2 => "norm2",
            Func::Sum => "sum",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Log1p => "log1p",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Expr {
    Number(f64, Span),
    Ident(String, Span),
    Neg(Box<Expr>, Span),
    Transpose(Box<Expr>, Span),
    Binary(BinOp, Box<Expr>, Box<Expr>, Span),
    Call(Func, Box<Expr>, Span),
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Number(_, s)
            | Expr::Ident(_, s)
            | Expr::Neg(_, s)
            | Expr::Transpose(_, s)
            | Expr::Binary(_, _, _, s)
            | Expr::Call(_, _, s) => *s,
        }
    }

    /// Equality of structure and values, ignoring source positions.
    pub fn structurally_eq(&self, other: &Expr) -> bool {
        match (self, other) {
            (Expr::Number(a, _), Expr::Number(b, _)) => a == b,
            (Expr::Ident(a, _), Expr::Ident(b, _)) => a == b,
            (Expr::Neg(a, _), Expr::Neg(b, _)) => a.structurally_eq(b),
            (Expr::Transpose(a, _), Expr::Transpose(b, _)) => a.structurally_eq(b),
            (Expr::Binary(op_a, la, ra, _), Expr::Binary(op_b, lb, rb, _)) => {
                op_a == op_b && la.structurally_eq(lb) && ra.structurally_eq(rb)
            }
            (Expr::Call(fa, a, _), Expr::Call(fb, b, _)) => fa == fb && a.structurally_eq(b),
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub lhs: Expr,
    pub rel: Relation,
    pub rhs: Expr,
    pub span: Span,
}

/// A parsed model: declarations in source order, one objective, a possibly
/// empty constraint list.
#[derive(Debug, Clone)]
pub struct Ast {
    pub decls: Vec<Decl>,
    pub objective: Expr,
    pub constraints: Vec<Constraint>,
}

impl Ast {
    pub fn parameters(&self) -> impl Iterator<Item = &Decl> {
        self.decls.iter().filter(|d| d.role == Role::Parameter)
    }

    pub fn variables(&self) -> impl Iterator<Item = &Decl> {
        self.decls.iter().filter(|d| d.role == Role::Variable)
    }

    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }

    pub fn structurally_eq(&self, other: &Ast) -> bool {
        self.decls.len() == other.decls.len()
            && self
                .decls
                .iter()
                .zip(&other.decls)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.role == b.role)
            && self.objective.structurally_eq(&other.objective)
            && self.constraints.len() == other.constraints.len()
            && self.constraints.iter().zip(&other.constraints).all(|(a, b)| {
                a.rel == b.rel && a.lhs.structurally_eq(&b.lhs) && a.rhs.structurally_eq(&b.rhs)
            })
    }
}

// Precedence levels for the pretty-printer: additive 1, multiplicative 2,
// unary minus 3, postfix transpose and atoms above.
fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Binary(BinOp::Mul | BinOp::ElemMul | BinOp::Div, ..) => 2,
        Expr::Neg(..) => 3,
        _ => 4,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    let prec = precedence(e);
    let parens = prec < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match e {
        Expr::Number(v, _) => write!(f, "{v}")?,
        Expr::Ident(name, _) => write!(f, "{name}")?,
        Expr::Neg(inner, _) => {
            write!(f, "-")?;
            write_expr(f, inner, 3)?;
        }
        Expr::Transpose(inner, _) => {
            write_expr(f, inner, 4)?;
            write!(f, "'")?;
        }
        Expr::Binary(op, lhs, rhs, _) => {
            let (sym, left, right) = match op {
                BinOp::Add => (" + ", 1, 2),
                BinOp::Sub => (" - ", 1, 2),
                BinOp::Mul => (" * ", 2, 3),
                BinOp::ElemMul => (" .* ", 2, 3),
                BinOp::Div => (" / ", 2, 3),
            };
            write_expr(f, lhs, left)?;
            write!(f, "{sym}")?;
            write_expr(f, rhs, right)?;
        }
        Expr::Call(func, arg, _) => {
            write!(f, "{}(", func.name())?;
            write_expr(f, arg, 1)?;
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self, 1)
    }
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<&Decl> = self.parameters().collect();
        if !params.is_empty() {
            writeln!(f, "parameters")?;
            for d in params {
                writeln!(f, "  {} {}", d.kind, d.name)?;
            }
        }
        writeln!(f, "variables")?;
        for d in self.variables() {
            writeln!(f, "  {} {}", d.kind, d.name)?;
        }
        writeln!(f, "min")?;
        writeln!(f, "  {}", self.objective)?;
        if !self.constraints.is_empty() {
            writeln!(f, "st")?;
            for c in &self.constraints {
                writeln!(f, "  {} {} {}", c.lhs, c.rel, c.rhs)?;
            }
        }
        Ok(())
    }
}

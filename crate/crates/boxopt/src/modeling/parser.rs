//! Lexer and recursive-descent parser for model files.
//!
//! Whitespace-insensitive; `#` starts a line comment. Section keywords are
//! lowercase and appear in the fixed order `parameters`, `variables`,
//! `min`, `st`; the first two sections hold `Matrix|Vector|Scalar IDENT`
//! declarations, `min` is followed by one expression, `st` by one or more
//! `expr (==|<=|>=) expr` constraints.

use std::collections::HashSet;

use crate::error::{Error, Result};

use super::ast::{Ast, BinOp, Constraint, Decl, Expr, Func, Kind, Relation, Role, Span};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    KwParameters,
    KwVariables,
    KwMin,
    KwSt,
    KwMatrix,
    KwVector,
    KwScalar,
    Func(Func),
    Plus,
    Minus,
    Star,
    DotStar,
    Slash,
    Quote,
    EqEq,
    Le,
    Ge,
    LParen,
    RParen,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier {s:?}"),
            Tok::Number(v) => write!(f, "number {v}"),
            Tok::KwParameters => write!(f, "'parameters'"),
            Tok::KwVariables => write!(f, "'variables'"),
            Tok::KwMin => write!(f, "'min'"),
            Tok::KwSt => write!(f, "'st'"),
            Tok::KwMatrix => write!(f, "'Matrix'"),
            Tok::KwVector => write!(f, "'Vector'"),
            Tok::KwScalar => write!(f, "'Scalar'"),
            Tok::Func(func) => write!(f, "'{}'", func.name()),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::DotStar => write!(f, "'.*'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Quote => write!(f, "'''"),
            Tok::EqEq => write!(f, "'=='"),
            Tok::Le => write!(f, "'<='"),
            Tok::Ge => write!(f, "'>='"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
        }
    }
}

fn parse_err(span: Span, msg: impl Into<String>) -> Error {
    Error::Parse {
        line: span.line,
        col: span.col,
        msg: msg.into(),
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn span(&self) -> Span {
        Span {
            line: self.line,
            col: self.col,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Span)>> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c == b'#' {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let span = self.span();
            let Some(c) = self.peek() else {
                return Ok(out);
            };
            let tok = match c {
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    Tok::Minus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'\'' => {
                    self.bump();
                    Tok::Quote
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'.' => {
                    self.bump();
                    if self.peek() == Some(b'*') {
                        self.bump();
                        Tok::DotStar
                    } else {
                        return Err(parse_err(span, "expected '*' after '.'"));
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::EqEq
                    } else {
                        return Err(parse_err(span, "expected '==' (single '=' is not a relation)"));
                    }
                }
                b'<' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Le
                    } else {
                        return Err(parse_err(span, "expected '<='"));
                    }
                }
                b'>' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Ge
                    } else {
                        return Err(parse_err(span, "expected '>='"));
                    }
                }
                b'0'..=b'9' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(b'0'..=b'9')) {
                        self.bump();
                    }
                    // Fractional part; '.' only counts when a digit follows,
                    // so `2.*x` lexes as 2 .* x.
                    if self.peek() == Some(b'.')
                        && matches!(self.src.get(self.pos + 1), Some(b'0'..=b'9'))
                    {
                        self.bump();
                        while matches!(self.peek(), Some(b'0'..=b'9')) {
                            self.bump();
                        }
                    }
                    if matches!(self.peek(), Some(b'e' | b'E')) {
                        let mut probe = self.pos + 1;
                        if matches!(self.src.get(probe), Some(b'+' | b'-')) {
                            probe += 1;
                        }
                        if matches!(self.src.get(probe), Some(b'0'..=b'9')) {
                            self.bump();
                            if matches!(self.peek(), Some(b'+' | b'-')) {
                                self.bump();
                            }
                            while matches!(self.peek(), Some(b'0'..=b'9')) {
                                self.bump();
                            }
                        }
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    let value: f64 = text
                        .parse()
                        .map_err(|_| parse_err(span, format!("bad number {text:?}")))?;
                    Tok::Number(value)
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let start = self.pos;
                    while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                        self.bump();
                    }
                    let word = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    match word {
                        "parameters" => Tok::KwParameters,
                        "variables" => Tok::KwVariables,
                        "min" => Tok::KwMin,
                        "st" => Tok::KwSt,
                        "Matrix" => Tok::KwMatrix,
                        "Vector" => Tok::KwVector,
                        "Scalar" => Tok::KwScalar,
                        "norm2" => Tok::Func(Func::Norm2),
                        "sum" => Tok::Func(Func::Sum),
                        "exp" => Tok::Func(Func::Exp),
                        "log" => Tok::Func(Func::Log),
                        "log1p" => Tok::Func(Func::Log1p),
                        _ => Tok::Ident(word.to_string()),
                    }
                }
                other => {
                    return Err(parse_err(
                        span,
                        format!("unexpected character {:?}", other as char),
                    ))
                }
            };
            out.push((tok, span));
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    end: Span,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> Span {
        self.toks.get(self.pos).map_or(self.end, |(_, s)| *s)
    }

    fn bump(&mut self) -> Option<(Tok, Span)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Span> {
        match self.bump() {
            Some((tok, span)) if &tok == want => Ok(span),
            Some((tok, span)) => Err(parse_err(span, format!("expected {what}, found {tok}"))),
            None => Err(parse_err(self.end, format!("expected {what}, found end of input"))),
        }
    }

    fn parse_decls(&mut self, role: Role, out: &mut Vec<Decl>) -> Result<()> {
        let mut any = false;
        loop {
            let kind = match self.peek() {
                Some(Tok::KwMatrix) => Kind::Matrix,
                Some(Tok::KwVector) => Kind::Vector,
                Some(Tok::KwScalar) => Kind::Scalar,
                _ => break,
            };
            let (_, span) = self.bump().unwrap();
            match self.bump() {
                Some((Tok::Ident(name), _)) => {
                    out.push(Decl {
                        name,
                        kind,
                        role,
                        span,
                    });
                    any = true;
                }
                Some((tok, span)) => {
                    return Err(parse_err(span, format!("expected identifier, found {tok}")))
                }
                None => return Err(parse_err(self.end, "expected identifier, found end of input")),
            }
        }
        if !any {
            return Err(parse_err(
                self.here(),
                "expected at least one 'Matrix|Vector|Scalar IDENT' declaration",
            ));
        }
        Ok(())
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            let (_, span) = self.bump().unwrap();
            let rhs = self.parse_term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::DotStar) => BinOp::ElemMul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            let (_, span) = self.bump().unwrap();
            let rhs = self.parse_factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs), span);
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self) -> Result<Expr> {
        if let Some(Tok::Minus) = self.peek() {
            let (_, span) = self.bump().unwrap();
            let inner = self.parse_factor()?;
            return Ok(Expr::Neg(Box::new(inner), span));
        }
        let mut atom = self.parse_atom()?;
        while let Some(Tok::Quote) = self.peek() {
            let (_, span) = self.bump().unwrap();
            atom = Expr::Transpose(Box::new(atom), span);
        }
        Ok(atom)
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        match self.bump() {
            Some((Tok::Number(v), span)) => Ok(Expr::Number(v, span)),
            Some((Tok::Ident(name), span)) => Ok(Expr::Ident(name, span)),
            Some((Tok::Func(func), span)) => {
                self.expect(&Tok::LParen, "'('")?;
                let arg = self.parse_expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(Expr::Call(func, Box::new(arg), span))
            }
            Some((Tok::LParen, _)) => {
                let inner = self.parse_expr()?;
                self.expect(&Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some((tok, span)) => Err(parse_err(span, format!("expected an expression, found {tok}"))),
            None => Err(parse_err(self.end, "expected an expression, found end of input")),
        }
    }
}

fn check_identifiers(expr: &Expr, declared: &HashSet<&str>) -> Result<()> {
    match expr {
        Expr::Number(..) => Ok(()),
        Expr::Ident(name, span) => {
            if declared.contains(name.as_str()) {
                Ok(())
            } else {
                Err(parse_err(*span, format!("undeclared identifier {name:?}")))
            }
        }
        Expr::Neg(inner, _) | Expr::Transpose(inner, _) | Expr::Call(_, inner, _) => {
            check_identifiers(inner, declared)
        }
        Expr::Binary(_, lhs, rhs, _) => {
            check_identifiers(lhs, declared)?;
            check_identifiers(rhs, declared)
        }
    }
}

/// Parses model source into an [`Ast`], reporting the first error with its
/// line and column.
pub fn parse(src: &str) -> Result<Ast> {
    let toks = Lexer::new(src).tokens()?;
    let end = toks.last().map_or(Span::start(), |(_, s)| *s);
    let mut p = Parser { toks, pos: 0, end };

    let mut decls = Vec::new();
    if let Some(Tok::KwParameters) = p.peek() {
        p.bump();
        p.parse_decls(Role::Parameter, &mut decls)?;
    }
    p.expect(&Tok::KwVariables, "'variables'")?;
    p.parse_decls(Role::Variable, &mut decls)?;
    p.expect(&Tok::KwMin, "'min'")?;
    let objective = p.parse_expr()?;

    let mut constraints = Vec::new();
    if let Some(Tok::KwSt) = p.peek() {
        p.bump();
        loop {
            let lhs = p.parse_expr()?;
            let (rel, span) = match p.bump() {
                Some((Tok::EqEq, s)) => (Relation::Eq, s),
                Some((Tok::Le, s)) => (Relation::Le, s),
                Some((Tok::Ge, s)) => (Relation::Ge, s),
                Some((tok, s)) => {
                    return Err(parse_err(s, format!("expected '==', '<=' or '>=', found {tok}")))
                }
                None => {
                    return Err(parse_err(
                        p.end,
                        "expected '==', '<=' or '>=', found end of input",
                    ))
                }
            };
            let rhs = p.parse_expr()?;
            constraints.push(Constraint {
                lhs,
                rel,
                rhs,
                span,
            });
            if p.peek().is_none() {
                break;
            }
        }
    }
    if let Some((tok, span)) = p.bump() {
        return Err(parse_err(span, format!("unexpected {tok} after the model")));
    }

    // Duplicate declarations.
    let mut seen: HashSet<&str> = HashSet::new();
    for d in &decls {
        if !seen.insert(d.name.as_str()) {
            return Err(parse_err(
                d.span,
                format!("duplicate declaration of {:?}", d.name),
            ));
        }
    }

    // Every identifier must be declared.
    let declared: HashSet<&str> = decls.iter().map(|d| d.name.as_str()).collect();
    check_identifiers(&objective, &declared)?;
    for c in &constraints {
        check_identifiers(&c.lhs, &declared)?;
        check_identifiers(&c.rhs, &declared)?;
    }

    Ok(Ast {
        decls,
        objective,
        constraints,
    })
}

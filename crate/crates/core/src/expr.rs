//! Arithmetic expressions for user-defined density families.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = ("-" | "+") unary | power ;
//! power   = primary [ "^" unary ] ;            (* right associative *)
//! primary = number | ident | ident "(" expr { "," expr } ")" | "(" expr ")" ;
//! number  = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ```
//!
//! Identifiers are the variables `x`, `m`, `a`, `t`, the constant `pi`, and
//! the functions `sin cos exp log sqrt abs` (one argument) and `min max`
//! (two arguments). `m` and `t` both denote the axial coordinate.

use std::fmt;

use crate::error::{Error, Result};
use crate::jet::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    M,
    A,
    T,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::M => "m",
            Var::A => "a",
            Var::T => "t",
        }
    }

    fn from_name(s: &str) -> Option<Var> {
        match s {
            "x" => Some(Var::X),
            "m" => Some(Var::M),
            "a" => Some(Var::A),
            "t" => Some(Var::T),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values bound to the expression variables.
#[derive(Debug, Clone, Copy)]
pub struct Bindings<S> {
    pub x: S,
    pub a: S,
    pub t: S,
}

/// Parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionAst {
    root: Expr,
    source: String,
}

impl ExpressionAst {
    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses(&self, v: Var) -> bool {
        fn walk(e: &Expr, v: Var) -> bool {
            match e {
                Expr::Num(_) => false,
                Expr::Var(w) => *w == v,
                Expr::Neg(a) => walk(a, v),
                Expr::Bin(_, a, b) => walk(a, v) || walk(b, v),
                Expr::Call(_, args) => args.iter().any(|a| walk(a, v)),
            }
        }
        walk(&self.root, v)
    }

    pub fn eval<S: Scalar>(&self, b: &Bindings<S>) -> Result<S> {
        eval_node(&self.root, b)
    }

    /// Evaluates on plain numbers with `m` as the axial coordinate.
    pub fn eval_f64(&self, x: f64, m: f64) -> Result<f64> {
        self.eval(&Bindings { x, a: 0.0, t: m })
    }

    /// Value of a variable-free expression.
    pub fn constant_value(&self) -> Result<f64> {
        for v in [Var::X, Var::M, Var::A, Var::T] {
            if self.uses(v) {
                return Err(Error::EvalDomain(format!(
                    "expression `{}` is not constant (uses `{}`)",
                    self.source,
                    v.name()
                )));
            }
        }
        self.eval_f64(0.0, 0.0)
    }
}

impl fmt::Display for ExpressionAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "(0-{})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => write!(f, "({a}{}{b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn domain_err(msg: impl Into<String>) -> Error {
    Error::EvalDomain(msg.into())
}

fn finite<S: Scalar>(v: S, what: &str) -> Result<S> {
    if v.value().is_finite() {
        Ok(v)
    } else {
        Err(domain_err(format!("{what} produced a non-finite value")))
    }
}

fn eval_node<S: Scalar>(e: &Expr, b: &Bindings<S>) -> Result<S> {
    match e {
        Expr::Num(v) => Ok(S::from_f64(*v)),
        Expr::Var(Var::X) => Ok(b.x),
        Expr::Var(Var::A) => Ok(b.a),
        Expr::Var(Var::M | Var::T) => Ok(b.t),
        Expr::Neg(a) => Ok(-eval_node(a, b)?),
        Expr::Bin(op, l, r) => {
            let lv = eval_node(l, b)?;
            match op {
                BinOp::Pow => {
                    if let Expr::Num(p) = **r {
                        if p.fract() != 0.0 && lv.value() < 0.0 {
                            return Err(domain_err("fractional power of a negative number"));
                        }
                        if p < 0.0 && lv.value() == 0.0 {
                            return Err(domain_err("negative power of zero"));
                        }
                        return finite(lv.powf(p), "power");
                    }
                    let rv = eval_node(r, b)?;
                    if rv.value().fract() == 0.0 && rv.value().abs() < 1e9 && is_constant(r) {
                        return finite(lv.powi(rv.value() as i32), "power");
                    }
                    if lv.value() <= 0.0 {
                        return Err(domain_err("variable exponent requires a positive base"));
                    }
                    finite(lv.pow(rv), "power")
                }
                _ => {
                    let rv = eval_node(r, b)?;
                    match op {
                        BinOp::Add => Ok(lv + rv),
                        BinOp::Sub => Ok(lv - rv),
                        BinOp::Mul => Ok(lv * rv),
                        BinOp::Div => {
                            if rv.value() == 0.0 {
                                return Err(domain_err("division by zero"));
                            }
                            finite(lv / rv, "division")
                        }
                        BinOp::Pow => unreachable!(),
                    }
                }
            }
        }
        Expr::Call(func, args) => {
            let v = eval_node(&args[0], b)?;
            let out = match func {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Log => {
                    if v.value() <= 0.0 {
                        return Err(domain_err(format!(
                            "log of non-positive value {}",
                            v.value()
                        )));
                    }
                    v.ln()
                }
                Func::Sqrt => {
                    if v.value() < 0.0 {
                        return Err(domain_err(format!("sqrt of negative value {}", v.value())));
                    }
                    v.sqrt()
                }
                Func::Abs => v.abs(),
                Func::Min => v.min(eval_node(&args[1], b)?),
                Func::Max => v.max(eval_node(&args[1], b)?),
            };
            finite(out, func.name())
        }
    }
}

fn is_constant(e: &Expr) -> bool {
    match e {
        Expr::Num(_) => true,
        Expr::Var(_) => false,
        Expr::Neg(a) => is_constant(a),
        Expr::Bin(_, a, b) => is_constant(a) && is_constant(b),
        Expr::Call(_, args) => args.iter().all(is_constant),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

/// Splits `text` into tokens tagged with their byte offsets.
pub(crate) fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()))
        {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| Error::Syntax {
                offset: start,
                message: format!("malformed number `{lit}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else {
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => {
                    return Err(Error::Syntax {
                        offset: start,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((start, tok));
            i += c.len_utf8();
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.err("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let func = Func::from_name(&name).ok_or_else(|| Error::UnknownIdentifier {
                        name: name.clone(),
                        offset,
                    })?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    if self.peek() != Some(&Tok::RParen) {
                        return Err(self.err("expected `)` or `,`"));
                    }
                    self.pos += 1;
                    if args.len() != func.arity() {
                        return Err(Error::Arity {
                            name,
                            expected: func.arity(),
                            found: args.len(),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                if let Some(v) = Var::from_name(&name) {
                    return Ok(Expr::Var(v));
                }
                if name == "pi" {
                    return Ok(Expr::Num(std::f64::consts::PI));
                }
                if Func::from_name(&name).is_some() {
                    return Err(self.err(format!("function `{name}` requires arguments")));
                }
                Err(Error::UnknownIdentifier { name, offset })
            }
            Some(t) => Err(self.err(format!("unexpected token {t:?}"))),
            None => Err(self.err("unexpected end of expression")),
        }
    }
}

pub fn parse_density_expression(text: &str) -> Result<ExpressionAst> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: text.len(),
    };
    let root = p.expr()?;
    if p.pos != toks.len() {
        return Err(p.err("trailing input"));
    }
    Ok(ExpressionAst {
        root,
        source: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn example_one_value() {
        let e = parse_density_expression("2*x^2*m + 5*(1-x^2)*m^4").unwrap();
        assert_eq!(e.eval_f64(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(e.eval_f64(1.0, 0.5).unwrap(), 1.0);
        assert_eq!(e.eval_f64(0.0, 1.0).unwrap(), 5.0);
    }

    #[test]
    fn identity_and_precedence() {
        assert_eq!(
            parse_density_expression("m")
                .unwrap()
                .eval_f64(0.0, 0.5)
                .unwrap(),
            0.5
        );
        let e = parse_density_expression("-2^2 + 3*4/2 - 1").unwrap();
        assert_eq!(e.constant_value().unwrap(), -4.0 + 6.0 - 1.0);
        let e = parse_density_expression("2^3^2").unwrap();
        assert_eq!(e.constant_value().unwrap(), 512.0);
        let e = parse_density_expression("max(1, min(pi, 4)) + .5e1").unwrap();
        assert!((e.constant_value().unwrap() - (std::f64::consts::PI + 5.0)).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        let e = parse_density_expression("sin(1/m)").unwrap();
        assert!(matches!(e.eval_f64(0.0, 0.0), Err(Error::EvalDomain(_))));
        assert!(matches!(
            parse_density_expression("log(-m)")
                .unwrap()
                .eval_f64(0.0, 0.5),
            Err(Error::EvalDomain(_))
        ));
        assert!(matches!(
            parse_density_expression("2 * (m + 1"),
            Err(Error::Syntax { offset: 10, .. })
        ));
        assert!(matches!(
            parse_density_expression("m + y"),
            Err(Error::UnknownIdentifier { offset: 4, .. })
        ));
        assert!(matches!(
            parse_density_expression("min(m)"),
            Err(Error::Arity {
                expected: 2,
                found: 1,
                ..
            })
        ));
        assert!(matches!(
            parse_density_expression("m $ 2"),
            Err(Error::Syntax { offset: 2, .. })
        ));
        assert!(parse_density_expression("m m").is_err());
    }

    fn arb_expr() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (0u32..20).prop_map(|n| format!("{n}")),
            (1u32..9).prop_map(|n| format!("{}.25", n)),
            Just("x".to_string()),
            Just("m".to_string()),
        ];
        leaf.prop_recursive(4, 24, 3, |inner| {
            prop_oneof![
                (
                    inner.clone(),
                    inner.clone(),
                    prop::sample::select(vec!['+', '-', '*', '/'])
                )
                    .prop_map(|(a, b, op)| format!("{a} {op} {b}")),
                inner.clone().prop_map(|a| format!("({a})")),
                inner.clone().prop_map(|a| format!("-{a}")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                (inner.clone(), inner).prop_map(|(a, b)| format!("max({a}, {b})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn pretty_print_reparses_to_same_tree(src in arb_expr()) {
            let ast = parse_density_expression(&src).unwrap();
            let printed = ast.to_string();
            let again = parse_density_expression(&printed).unwrap();
            prop_assert_eq!(ast.root(), again.root());
        }
    }
}

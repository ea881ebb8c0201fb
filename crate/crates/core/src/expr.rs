//! Scalar expressions over named coordinates.
//!
//! Expressions are parsed from a small calculator grammar, evaluated in
//! `f64`, and differentiated symbolically. Every geometric object in the
//! crate (anchors, brackets, bivectors, core maps, sections) is assembled
//! from these.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' int)?          int := '-'? digits | '(' '-'? digits ')'
//! atom    := number | ident | ident '(' args ')' | '(' expr ')'
//! ```
//!
//! `^` binds tighter than unary minus, so `-x^2` is `-(x^2)`. Exponents are
//! integer literals. Built-in functions: `sin cos tan exp log sqrt` (one
//! argument), `atan2(y, x)`, the smooth-but-not-analytic gluing primitives
//! `flat(u)` = `exp(-1/u)` for `u > 0` and `0` otherwise, `flatinv(u, k)` =
//! `flat(u) / u^k`, and the bump `bump(a, b, t)` which is smooth, positive
//! exactly on `(a, b)` and equal to `1` at the midpoint. `pi` is a constant
//! unless shadowed by a variable.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// One-argument analytic functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

/// Expression tree. Variables are indices into the variable list the
/// expression was parsed against.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
    Atan2(Box<Expr>, Box<Expr>),
    /// `exp(-1/u) / u^k` for `u > 0`, `0` otherwise.
    Flat(u32, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("point {point:?} violates domain predicate {predicate}")]
    Domain { point: Vec<f64>, predicate: usize },
    #[error("component {component} is not finite at {point:?}")]
    NonFinite { component: usize, point: Vec<f64> },
    #[error("expected a point of dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

fn flat_value(k: u32, u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp() / u.powi(k as i32)
    } else {
        0.0
    }
}

// Smart constructors. They fold constants and drop additive and
// multiplicative identities; nothing more.

fn fold(v: f64) -> Option<Expr> {
    v.is_finite().then_some(Expr::Const(v))
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            a => Expr::Neg(Box::new(a)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(e) = fold(x + y) {
                return e;
            }
        }
        if a.is_zero() {
            return b;
        }
        if b.is_zero() {
            return a;
        }
        Expr::Add(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(e) = fold(x - y) {
                return e;
            }
        }
        if b.is_zero() {
            return a;
        }
        if a.is_zero() {
            return Expr::neg(b);
        }
        Expr::Sub(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(e) = fold(x * y) {
                return e;
            }
        }
        if a.is_zero() || b.is_zero() {
            return Expr::Const(0.0);
        }
        if a.is_one() {
            return b;
        }
        if b.is_one() {
            return a;
        }
        Expr::Mul(Box::new(a), Box::new(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            if let Some(e) = fold(x / y) {
                return e;
            }
        }
        if a.is_zero() && !b.is_zero() {
            return Expr::Const(0.0);
        }
        if b.is_one() {
            return a;
        }
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        if n == 0 {
            return Expr::Const(1.0);
        }
        if n == 1 {
            return a;
        }
        if let Some(x) = a.as_const() {
            if let Some(e) = fold(x.powi(n)) {
                return e;
            }
        }
        Expr::Pow(Box::new(a), n)
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Some(x) = a.as_const() {
            if let Some(e) = fold(f.apply(x)) {
                return e;
            }
        }
        Expr::Call(f, Box::new(a))
    }

    pub fn atan2(y: Expr, x: Expr) -> Expr {
        if let (Some(a), Some(b)) = (y.as_const(), x.as_const()) {
            if let Some(e) = fold(a.atan2(b)) {
                return e;
            }
        }
        Expr::Atan2(Box::new(y), Box::new(x))
    }

    pub fn flat(k: u32, u: Expr) -> Expr {
        if let Some(x) = u.as_const() {
            return Expr::Const(flat_value(k, x));
        }
        Expr::Flat(k, Box::new(u))
    }

    /// Smooth bump on `(a, b)` normalised to `1` at the midpoint:
    /// `e * flat(4 (t - a)(b - t) / (b - a)^2)`.
    pub fn bump(a: Expr, b: Expr, t: Expr) -> Expr {
        let width = Expr::sub(b.clone(), a.clone());
        let q = Expr::div(
            Expr::mul(
                Expr::Const(4.0),
                Expr::mul(Expr::sub(t.clone(), a), Expr::sub(b, t)),
            ),
            Expr::pow(width, 2),
        );
        Expr::mul(Expr::Const(std::f64::consts::E), Expr::flat(0, q))
    }

    /// Evaluate without any finiteness check.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, n) => a.eval(x).powi(*n),
            Expr::Call(f, a) => f.apply(a.eval(x)),
            Expr::Atan2(y, xx) => y.eval(x).atan2(xx.eval(x)),
            Expr::Flat(k, u) => flat_value(*k, u.eval(x)),
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) | Expr::Flat(_, a) => a.max_var(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Atan2(a, b) => match (a.max_var(), b.max_var()) {
                (Some(p), Some(q)) => Some(p.max(q)),
                (p, q) => p.or(q),
            },
        }
    }

    /// Exact symbolic partial derivative with respect to variable `v`.
    pub fn diff(&self, v: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff(v)),
            Expr::Add(a, b) => Expr::add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => Expr::sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(v), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(v)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(v);
                let db = b.diff(v);
                Expr::sub(
                    Expr::div(da, (**b).clone()),
                    Expr::div(Expr::mul((**a).clone(), db), Expr::pow((**b).clone(), 2)),
                )
            }
            Expr::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                a.diff(v),
            ),
            Expr::Call(f, a) => {
                let da = a.diff(v);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, inner),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                    Func::Tan => Expr::div(
                        Expr::Const(1.0),
                        Expr::pow(Expr::call(Func::Cos, inner), 2),
                    ),
                    Func::Exp => Expr::call(Func::Exp, inner),
                    Func::Log => Expr::div(Expr::Const(1.0), inner),
                    Func::Sqrt => Expr::div(
                        Expr::Const(0.5),
                        Expr::call(Func::Sqrt, inner),
                    ),
                };
                Expr::mul(outer, da)
            }
            Expr::Atan2(y, x) => {
                let dy = y.diff(v);
                let dx = x.diff(v);
                let num = Expr::sub(
                    Expr::mul((**x).clone(), dy),
                    Expr::mul((**y).clone(), dx),
                );
                let den = Expr::add(
                    Expr::pow((**x).clone(), 2),
                    Expr::pow((**y).clone(), 2),
                );
                Expr::div(num, den)
            }
            Expr::Flat(k, u) => {
                // d/du [e^{-1/u} u^{-k}] = e^{-1/u} u^{-k-2} - k e^{-1/u} u^{-k-1}
                let du = u.diff(v);
                if du.is_zero() {
                    return Expr::Const(0.0);
                }
                let inner = (**u).clone();
                let lead = Expr::flat(k + 2, inner.clone());
                let outer = if *k == 0 {
                    lead
                } else {
                    Expr::sub(lead, Expr::mul(Expr::Const(*k as f64), Expr::flat(k + 1, inner)))
                };
                Expr::mul(outer, du)
            }
        }
    }

    /// Replace every `Var(i)` with `replacements[i]`.
    pub fn substitute(&self, replacements: &[Expr]) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => replacements[*i].clone(),
            Expr::Neg(a) => Expr::neg(a.substitute(replacements)),
            Expr::Add(a, b) => Expr::add(a.substitute(replacements), b.substitute(replacements)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(replacements), b.substitute(replacements)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(replacements), b.substitute(replacements)),
            Expr::Div(a, b) => Expr::div(a.substitute(replacements), b.substitute(replacements)),
            Expr::Pow(a, n) => Expr::pow(a.substitute(replacements), *n),
            Expr::Call(f, a) => Expr::call(*f, a.substitute(replacements)),
            Expr::Atan2(y, x) => Expr::atan2(y.substitute(replacements), x.substitute(replacements)),
            Expr::Flat(k, u) => Expr::flat(*k, u.substitute(replacements)),
        }
    }

    /// Shift every variable index by `offset` (used when prepending variables).
    pub fn shift_vars(&self, offset: usize) -> Expr {
        let max = self.max_var().map_or(0, |m| m + 1);
        let reps: Vec<Expr> = (0..max).map(|i| Expr::Var(i + offset)).collect();
        self.substitute(&reps)
    }

    /// Printable form against the given variable names. Re-parsing the
    /// output reproduces the tree.
    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl ExprDisplay<'_> {
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let child = |c: &Expr, min: u8, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if c.precedence() < min {
                write!(f, "(")?;
                self.write(c, f)?;
                write!(f, ")")
            } else {
                self.write(c, f)
            }
        };
        match e {
            Expr::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => match self.names.get(*i) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "_v{i}"),
            },
            Expr::Neg(a) => {
                write!(f, "-")?;
                child(a, 3, f)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                child(a, 1, f)?;
                write!(f, "{}", if matches!(e, Expr::Add(..)) { " + " } else { " - " })?;
                child(b, 2, f)
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                child(a, 2, f)?;
                write!(f, "{}", if matches!(e, Expr::Mul(..)) { " * " } else { " / " })?;
                child(b, 3, f)
            }
            Expr::Pow(a, n) => {
                child(a, 5, f)?;
                if *n < 0 {
                    write!(f, "^(-{})", -(*n as i64))
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f)?;
                write!(f, ")")
            }
            Expr::Atan2(y, x) => {
                write!(f, "atan2(")?;
                self.write(y, f)?;
                write!(f, ", ")?;
                self.write(x, f)?;
                write!(f, ")")
            }
            Expr::Flat(k, u) => {
                if *k == 0 {
                    write!(f, "flat(")?;
                    self.write(u, f)?;
                    write!(f, ")")
                } else {
                    write!(f, "flatinv(")?;
                    self.write(u, f)?;
                    write!(f, ", {k})")
                }
            }
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}

// ---------------------------------------------------------------------------
// Parser

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Int(i64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (t, at) = lx.next()?;
            let end = t == Tok::End;
            out.push((t, at));
            if end {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(t) = single {
            self.pos += 1;
            return Ok((t, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            let mut is_int = true;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end < bytes.len() && bytes[end] == b'.' {
                is_int = false;
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut e = end + 1;
                if e < bytes.len() && (bytes[e] == b'+' || bytes[e] == b'-') {
                    e += 1;
                }
                if e < bytes.len() && bytes[e].is_ascii_digit() {
                    while e < bytes.len() && bytes[e].is_ascii_digit() {
                        e += 1;
                    }
                    is_int = false;
                    end = e;
                }
            }
            let text = &self.src[start..end];
            self.pos = end;
            if is_int {
                if let Ok(i) = text.parse::<i64>() {
                    return Ok((Tok::Int(i), start));
                }
            }
            return text
                .parse::<f64>()
                .map(|v| (Tok::Num(v), start))
                .map_err(|_| ParseError {
                    offset: start,
                    message: format!("malformed number '{text}'"),
                });
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError {
            offset: start,
            message: format!("unexpected character '{ch}'"),
        })
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if t != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn unexpected<T>(&self) -> Result<T, ParseError> {
        match self.peek() {
            Tok::End => self.err("unexpected end of input"),
            Tok::RParen => self.err("unbalanced ')'"),
            t => self.err(format!("unexpected token {t:?}")),
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == t {
            self.bump();
            Ok(())
        } else if *self.peek() == Tok::End && t == Tok::RParen {
            self.err("unbalanced '(': expected ')'")
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::add(lhs, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::mul(lhs, self.unary()?);
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::div(lhs, self.unary()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let n = self.exponent()?;
        if *self.peek() == Tok::Caret {
            return self.err("chained '^' is ambiguous; add parentheses");
        }
        Ok(Expr::pow(base, n))
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let paren = *self.peek() == Tok::LParen;
        if paren {
            self.bump();
        }
        let negative = *self.peek() == Tok::Minus;
        if negative {
            self.bump();
        }
        let value = match self.peek() {
            Tok::Int(i) => *i,
            Tok::Num(_) => return self.err("exponent must be an integer literal"),
            _ => return self.unexpected(),
        };
        let Ok(mut n) = i32::try_from(value) else {
            return self.err("exponent out of range");
        };
        self.bump();
        if negative {
            n = -n;
        }
        if paren {
            self.expect(Tok::RParen, "')'")?;
        }
        Ok(n)
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect(Tok::LParen, "'('")?;
        let mut out = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            out.push(self.expr()?);
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Int(i) => Ok(Expr::Const(i as f64)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                let arity_err = |n: usize, want: usize| ParseError {
                    offset: at,
                    message: format!("{name} takes {want} argument(s), got {n}"),
                };
                if let Some(func) = Func::from_name(&name) {
                    let mut a = self.args()?;
                    if a.len() != 1 {
                        return Err(arity_err(a.len(), 1));
                    }
                    return Ok(Expr::call(func, a.remove(0)));
                }
                match name.as_str() {
                    "atan2" => {
                        let mut a = self.args()?;
                        if a.len() != 2 {
                            return Err(arity_err(a.len(), 2));
                        }
                        let x = a.pop().unwrap();
                        let y = a.pop().unwrap();
                        Ok(Expr::atan2(y, x))
                    }
                    "flat" => {
                        let mut a = self.args()?;
                        if a.len() != 1 {
                            return Err(arity_err(a.len(), 1));
                        }
                        Ok(Expr::flat(0, a.remove(0)))
                    }
                    "flatinv" => {
                        let mut a = self.args()?;
                        if a.len() != 2 {
                            return Err(arity_err(a.len(), 2));
                        }
                        let k = a.pop().unwrap();
                        match k.as_const() {
                            Some(c) if c >= 1.0 && c.fract() == 0.0 && c < u32::MAX as f64 => {
                                Ok(Expr::flat(c as u32, a.remove(0)))
                            }
                            _ => Err(ParseError {
                                offset: at,
                                message: "flatinv order must be a positive integer literal".into(),
                            }),
                        }
                    }
                    "bump" => {
                        let mut a = self.args()?;
                        if a.len() != 3 {
                            return Err(arity_err(a.len(), 3));
                        }
                        let t = a.pop().unwrap();
                        let b = a.pop().unwrap();
                        let lo = a.pop().unwrap();
                        Ok(Expr::bump(lo, b, t))
                    }
                    _ => Err(ParseError {
                        offset: at,
                        message: format!("unknown identifier '{name}'"),
                    }),
                }
            }
            Tok::End => Err(ParseError {
                offset: at,
                message: "unexpected end of input".into(),
            }),
            Tok::RParen => Err(ParseError {
                offset: at,
                message: "unbalanced ')'".into(),
            }),
            t => Err(ParseError {
                offset: at,
                message: format!("unexpected token {t:?}"),
            }),
        }
    }
}

/// Parse `source` against the ordered variable list.
pub fn parse(source: &str, variables: &[String]) -> Result<Expr, ParseError> {
    for (i, v) in variables.iter().enumerate() {
        if variables[..i].contains(v) {
            return Err(ParseError {
                offset: 0,
                message: format!("duplicate variable '{v}'"),
            });
        }
    }
    let toks = Lexer::tokens(source)?;
    if toks[0].0 == Tok::End {
        return Err(ParseError {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        vars: variables,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.unexpected();
    }
    Ok(e)
}

/// `parse` with `&str` variable names.
pub fn parse_in(source: &str, variables: &[&str]) -> Result<Expr, ParseError> {
    let owned: Vec<String> = variables.iter().map(|s| s.to_string()).collect();
    parse(source, &owned)
}

/// Parse an expression with no free variables and evaluate it.
pub fn parse_constant(source: &str) -> Result<f64, ParseError> {
    let e = parse(source, &[])?;
    match e.max_var() {
        None => Ok(e.eval(&[])),
        Some(_) => Err(ParseError {
            offset: 0,
            message: "expected a constant expression".into(),
        }),
    }
}

/// Default coordinate names `x1..xn`.
pub fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

// ---------------------------------------------------------------------------
// Smooth maps

/// Vector-valued map `R^n ⊃ U -> R^m` with exact symbolic partials.
///
/// `U` is the set where every domain predicate evaluates strictly positive.
#[derive(Clone, Debug)]
pub struct SmoothMap {
    vars: Vec<String>,
    components: Vec<Expr>,
    partials: Vec<Vec<Expr>>,
    domain: Vec<Expr>,
}

impl SmoothMap {
    pub fn new(vars: Vec<String>, components: Vec<Expr>, domain: Vec<Expr>) -> Self {
        let n = vars.len();
        let partials = components
            .iter()
            .map(|c| (0..n).map(|j| c.diff(j)).collect())
            .collect();
        SmoothMap {
            vars,
            components,
            partials,
            domain,
        }
    }

    pub fn parse(vars: &[String], components: &[&str], domain: &[&str]) -> Result<Self, ParseError> {
        let comps = components
            .iter()
            .map(|s| parse(s, vars))
            .collect::<Result<Vec<_>, _>>()?;
        let dom = domain
            .iter()
            .map(|s| parse(s, vars))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SmoothMap::new(vars.to_vec(), comps, dom))
    }

    pub fn identity(vars: Vec<String>, domain: Vec<Expr>) -> Self {
        let comps = (0..vars.len()).map(Expr::Var).collect();
        SmoothMap::new(vars, comps, domain)
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn input_dim(&self) -> usize {
        self.vars.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn domain(&self) -> &[Expr] {
        &self.domain
    }

    pub fn partial_exprs(&self) -> &[Vec<Expr>] {
        &self.partials
    }

    pub fn with_domain(mut self, domain: Vec<Expr>) -> Self {
        self.domain = domain;
        self
    }

    /// Index of the first violated predicate, if any.
    pub fn domain_violation(&self, x: &[f64]) -> Option<usize> {
        self.domain.iter().position(|p| !(p.eval(x) > 0.0))
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.len() == self.input_dim() && self.domain_violation(x).is_none()
    }

    fn check_point(&self, x: &[f64]) -> Result<(), EvalError> {
        if x.len() != self.input_dim() {
            return Err(EvalError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if let Some(predicate) = self.domain_violation(x) {
            return Err(EvalError::Domain {
                point: x.to_vec(),
                predicate,
            });
        }
        Ok(())
    }

    fn finite(values: impl Iterator<Item = f64>, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        values
            .enumerate()
            .map(|(component, v)| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(EvalError::NonFinite {
                        component,
                        point: x.to_vec(),
                    })
                }
            })
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.check_point(x)?;
        Self::finite(self.components.iter().map(|c| c.eval(x)), x)
    }

    pub fn eval_vec(&self, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        self.eval(x).map(DVector::from_vec)
    }

    /// `m x n` matrix of symbolic partials evaluated at `x`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        self.check_point(x)?;
        let (m, n) = (self.output_dim(), self.input_dim());
        let flat = Self::finite(
            self.partials.iter().flat_map(|row| row.iter().map(|e| e.eval(x))),
            x,
        )?;
        Ok(DMatrix::from_row_slice(m, n, &flat))
    }

    /// Partials of every component with respect to variable `j`.
    pub fn partial(&self, x: &[f64], j: usize) -> Result<Vec<f64>, EvalError> {
        self.check_point(x)?;
        Self::finite(self.partials.iter().map(|row| row[j].eval(x)), x)
    }

    /// `self ∘ inner`: substitutes the components of `inner` for this map's
    /// variables. The result lives on `inner`'s domain.
    pub fn compose_after(&self, inner: &SmoothMap) -> SmoothMap {
        assert_eq!(self.input_dim(), inner.output_dim());
        let comps = self
            .components
            .iter()
            .map(|c| c.substitute(&inner.components))
            .collect();
        SmoothMap::new(inner.vars.clone(), comps, inner.domain.clone())
    }

    pub fn display_components(&self) -> Vec<String> {
        self.components
            .iter()
            .map(|c| c.display(&self.vars).to_string())
            .collect()
    }
}

/// Matrix-valued smooth map, entries stored row-major.
#[derive(Clone, Debug)]
pub struct MatrixMap {
    rows: usize,
    cols: usize,
    map: SmoothMap,
}

impl MatrixMap {
    pub fn new(rows: usize, cols: usize, map: SmoothMap) -> Self {
        assert_eq!(map.output_dim(), rows * cols, "matrix map entry count");
        MatrixMap { rows, cols, map }
    }

    pub fn from_entries(vars: Vec<String>, entries: Vec<Vec<Expr>>, domain: Vec<Expr>) -> Self {
        let rows = entries.len();
        let cols = entries.first().map_or(0, |r| r.len());
        assert!(entries.iter().all(|r| r.len() == cols), "ragged matrix");
        let flat = entries.into_iter().flatten().collect();
        MatrixMap::new(rows, cols, SmoothMap::new(vars, flat, domain))
    }

    pub fn parse(
        vars: &[String],
        entries: &[Vec<String>],
        domain: &[String],
    ) -> Result<Self, ParseError> {
        let rows = entries
            .iter()
            .map(|r| r.iter().map(|s| parse(s, vars)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(ParseError {
                offset: 0,
                message: "ragged matrix".into(),
            });
        }
        let dom = domain
            .iter()
            .map(|s| parse(s, vars))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MatrixMap::from_entries(vars.to_vec(), rows, dom))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn entry(&self, i: usize, j: usize) -> &Expr {
        &self.map.components()[i * self.cols + j]
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        let v = self.map.eval(x)?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &v))
    }

    /// Entrywise partial derivative with respect to variable `j`.
    pub fn partial(&self, x: &[f64], j: usize) -> Result<DMatrix<f64>, EvalError> {
        let v = self.map.partial(x, j)?;
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &v))
    }

    pub fn display_entries(&self) -> Vec<Vec<String>> {
        let names = self.map.vars();
        (0..self.rows)
            .map(|i| {
                (0..self.cols)
                    .map(|j| self.entry(i, j).display(names).to_string())
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        default_names("x", n)
    }

    fn central(e: &Expr, x: &[f64], v: usize, h: f64) -> f64 {
        let mut p = x.to_vec();
        let mut m = x.to_vec();
        p[v] += h;
        m[v] -= h;
        (e.eval(&p) - e.eval(&m)) / (2.0 * h)
    }

    #[test]
    fn pythagorean_identity() {
        let e = parse("sin(x1)^2 + cos(x1)^2", &names(1)).unwrap();
        assert!((e.eval(&[0.7]) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn trailing_operator_reports_end_offset() {
        let err = parse("x1 +", &names(1)).unwrap_err();
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn located_errors() {
        assert_eq!(parse("", &names(1)).unwrap_err().offset, 0);
        assert_eq!(parse("   ", &names(1)).unwrap_err().offset, 0);
        let e = parse("(x1 + 2", &names(1)).unwrap_err();
        assert_eq!(e.offset, 7);
        assert!(e.message.contains("unbalanced"));
        let e = parse("x1 + 2)", &names(1)).unwrap_err();
        assert_eq!(e.offset, 6);
        assert!(e.message.contains("unbalanced"));
        let e = parse("x1 * foo", &names(1)).unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(e.message.contains("unknown identifier"));
        assert!(parse("x1^1.5", &names(1)).is_err());
        assert!(parse("x1^2^3", &names(1)).is_err());
        assert!(parse("atan2(x1)", &names(1)).is_err());
        assert!(parse("x1", &["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn power_binds_tighter_than_unary_minus() {
        let e = parse("-x1^2", &names(1)).unwrap();
        assert_eq!(e.eval(&[3.0]), -9.0);
        let e = parse("x1^-1 + x1^(-2)", &names(1)).unwrap();
        assert!((e.eval(&[2.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn product_rule() {
        let e = parse("x1*x2", &names(2)).unwrap();
        assert_eq!(e.diff(0).eval(&[3.0, 5.0]), 5.0);
    }

    #[test]
    fn chain_rule_through_exp() {
        let e = parse("exp(x1*x2)", &names(2)).unwrap();
        let d = e.diff(0).eval(&[1.0, 2.0]);
        let d_expected = 2.0 * (2.0f64).exp();
        assert!((d - d_expected).abs() <= 1e-9, "{d} vs {d_expected}");
    }

    #[test]
    fn constant_derivative_is_zero() {
        let e = parse("7", &names(2)).unwrap();
        assert_eq!(e.diff(1), Expr::Const(0.0));
    }

    #[test]
    fn atan2_derivative_matches_finite_difference() {
        let e = parse("atan2(x2, x1)", &names(2)).unwrap();
        let fd = central(&e, &[1.0, 1.0], 0, 1e-5);
        assert!((fd + 0.5).abs() < 1e-9);
        assert!((e.diff(0).eval(&[1.0, 1.0]) - fd).abs() < 1e-9);
    }

    #[test]
    fn bump_profile() {
        let e = parse("bump(-0.5, 0.5, x1)", &names(1)).unwrap();
        assert!((e.eval(&[0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(e.eval(&[0.5]), 0.0);
        assert_eq!(e.eval(&[-0.7]), 0.0);
        assert!(e.eval(&[0.49]) > 0.0);
        let d = e.diff(0);
        assert_eq!(d.eval(&[0.8]), 0.0);
        for &h in &[-0.4, -0.1, 0.2, 0.45] {
            let fd = central(&e, &[h], 0, 1e-6);
            assert!((d.eval(&[h]) - fd).abs() < 1e-6, "at {h}");
        }
        let dd = d.diff(0);
        let fd2 = central(&d, &[0.3], 0, 1e-6);
        assert!((dd.eval(&[0.3]) - fd2).abs() < 1e-5);
    }

    #[test]
    fn print_parse_round_trip() {
        for src in [
            "x1 - (x2 - 3)",
            "-x1^2 * -2",
            "(-x1)^3 / (x2 + 1)",
            "atan2(x2, -x1) + flat(x1 - 0.25) - flatinv(x2, 3)",
            "2^(-1) * x1^(-2)",
            "sqrt(1 + x1^2) - log(2 + cos(x2))",
            "x1 / (x2 * x1)",
            "bump(0, 1, x1) * 1e-7",
        ] {
            let v = names(2);
            let a = parse(src, &v).unwrap();
            let printed = a.display(&v).to_string();
            let b = parse(&printed, &v).unwrap();
            assert_eq!(a, b, "{src} -> {printed}");
        }
    }

    #[test]
    fn smooth_map_domain_error() {
        let v = names(2);
        let m = SmoothMap::parse(&v, &["log(1 - x1^2 - x2^2)"], &["1 - x1^2 - x2^2"]).unwrap();
        assert!(m.eval(&[0.1, 0.2]).is_ok());
        assert!(matches!(m.eval(&[1.0, 0.5]), Err(EvalError::Domain { .. })));
        let raw = SmoothMap::parse(&v, &["log(x1)"], &[]).unwrap();
        assert!(matches!(raw.eval(&[-1.0, 0.0]), Err(EvalError::NonFinite { .. })));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let v = names(3);
        let m = SmoothMap::parse(&v, &["x1*sin(x2)", "exp(x3)*x1^2", "atan2(x2, 2 + x3)"], &[]).unwrap();
        let x = [0.3, -1.1, 0.4];
        let j = m.jacobian(&x).unwrap();
        for (r, c) in m.components().iter().enumerate() {
            for k in 0..3 {
                let fd = central(c, &x, k, 1e-5);
                assert!((j[(r, k)] - fd).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn composition_substitutes() {
        let v = names(2);
        let outer = SmoothMap::parse(&v, &["x1 + x2^2"], &[]).unwrap();
        let inner = SmoothMap::parse(&v, &["x2", "2*x1"], &[]).unwrap();
        let c = outer.compose_after(&inner);
        assert_eq!(c.eval(&[1.5, 3.0]).unwrap(), vec![3.0 + 9.0]);
    }
}

//! Small arithmetic expression language used for model coefficients.
//!
//! Expressions are built from real literals, the imaginary unit `i`, the
//! variables `t`, `x`, `u1..uN`, the operators `+ - * / ^` (integer powers
//! only) and the functions `sin cos exp re im conj`. Anything that depends on
//! the state `u` can be expanded into a polynomial in `(u, conj(u))` whose
//! coefficients are state-free expressions of `(t, x)`.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64 as C64;

use crate::error::ExprError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    T,
    X,
    /// State component, zero based (`u1` is `U(0)`).
    U(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Re,
    Im,
    Conj,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Re => "re",
            Func::Im => "im",
            Func::Conj => "conj",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "re" => Func::Re,
            "im" => Func::Im,
            "conj" => Func::Conj,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    /// The imaginary unit.
    Imag,
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

/// Evaluation environment.
#[derive(Clone, Copy, Debug)]
pub struct Env<'a> {
    pub t: f64,
    pub x: f64,
    pub u: &'a [C64],
}

impl<'a> Env<'a> {
    pub fn tx(t: f64, x: f64) -> Env<'static> {
        Env { t, x, u: &[] }
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ExprError> {
    let tokens = lex(text)?;
    if tokens.is_empty() {
        return Err(ExprError::Syntax { pos: 0, msg: "empty expression".into() });
    }
    let mut p = Parser { tokens, at: 0, len: text.len() };
    let e = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(ExprError::Syntax { pos: tok.pos, msg: format!("unexpected {}", tok.kind.describe()) });
    }
    Ok(e)
}

#[derive(Clone, Debug, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("`{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
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
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
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
            let v: f64 =
                lit.parse().map_err(|_| ExprError::Syntax { pos: start, msg: format!("malformed number `{lit}`") })?;
            out.push(Token { kind: TokKind::Num(v), pos: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(text[start..i].to_string()), pos: start });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                _ => return Err(ExprError::Syntax { pos: start, msg: format!("unexpected character `{c}`") }),
            };
            out.push(Token { kind, pos: start });
            i += c.len_utf8();
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn eof_err(&self, what: &str) -> ExprError {
        ExprError::Syntax { pos: self.len, msg: format!("expected {what}, found end of input") }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Token { kind: TokKind::Op(op @ ('+' | '-')), .. }) = self.peek().cloned() {
            self.at += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Token { kind: TokKind::Op(op @ ('*' | '/')), .. }) = self.peek().cloned() {
            self.at += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if let Some(Token { kind: TokKind::Op('-'), .. }) = self.peek() {
            self.at += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Token { kind: TokKind::Op('^'), .. }) = self.peek() {
            self.at += 1;
            let mut sign = 1;
            if let Some(Token { kind: TokKind::Op('-'), .. }) = self.peek() {
                self.at += 1;
                sign = -1;
            }
            match self.next() {
                Some(Token { kind: TokKind::Num(v), pos }) => {
                    if v.fract() != 0.0 || v.abs() > 64.0 {
                        return Err(ExprError::Syntax { pos, msg: "exponent must be a small integer".into() });
                    }
                    return Ok(Expr::Pow(Box::new(base), sign * v as i32));
                }
                Some(tok) => {
                    return Err(ExprError::Syntax {
                        pos: tok.pos,
                        msg: format!("expected integer exponent, found {}", tok.kind.describe()),
                    })
                }
                None => return Err(self.eof_err("integer exponent")),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let tok = self.next().ok_or_else(|| self.eof_err("operand"))?;
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::LParen => {
                let e = self.expr()?;
                match self.next() {
                    Some(Token { kind: TokKind::RParen, .. }) => Ok(e),
                    Some(t) => {
                        Err(ExprError::Syntax { pos: t.pos, msg: format!("expected `)`, found {}", t.kind.describe()) })
                    }
                    None => Err(self.eof_err("`)`")),
                }
            }
            TokKind::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    match self.next() {
                        Some(Token { kind: TokKind::LParen, .. }) => {}
                        Some(t) => {
                            return Err(ExprError::Syntax { pos: t.pos, msg: format!("expected `(` after `{name}`") })
                        }
                        None => return Err(self.eof_err("`(`")),
                    }
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Token { kind: TokKind::RParen, .. }) => {}
                        Some(t) => {
                            return Err(ExprError::Syntax {
                                pos: t.pos,
                                msg: format!("expected `)`, found {}", t.kind.describe()),
                            })
                        }
                        None => return Err(self.eof_err("`)`")),
                    }
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                match name.as_str() {
                    "t" => Ok(Expr::Var(Var::T)),
                    "x" => Ok(Expr::Var(Var::X)),
                    "i" => Ok(Expr::Imag),
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    _ => {
                        if let Some(rest) = name.strip_prefix('u') {
                            if let Ok(k) = rest.parse::<usize>() {
                                if k >= 1 {
                                    return Ok(Expr::Var(Var::U(k - 1)));
                                }
                            }
                        }
                        Err(ExprError::Syntax { pos: tok.pos, msg: format!("unknown identifier `{name}`") })
                    }
                }
            }
            other => {
                Err(ExprError::Syntax { pos: tok.pos, msg: format!("expected operand, found {}", other.describe()) })
            }
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn zero() -> Expr {
        Expr::Num(0.0)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 1.0)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            (Expr::Num(p), Expr::Num(q)) => Expr::Num(p + q),
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            (Expr::Num(p), Expr::Num(q)) => Expr::Num(p - q),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if a.is_zero() || b.is_zero() => Expr::zero(),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            (Expr::Num(p), Expr::Num(q)) => Expr::Num(p * q),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if a.is_zero() => Expr::zero(),
            _ if b.is_one() => a,
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match n {
            0 => Expr::Num(1.0),
            1 => a,
            _ => match a {
                Expr::Num(v) => Expr::Num(v.powi(n)),
                other => Expr::Pow(Box::new(other), n),
            },
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        match (f, &a) {
            (Func::Conj | Func::Re, Expr::Num(_)) => a,
            (Func::Im, Expr::Num(_)) => Expr::zero(),
            _ => Expr::Call(f, Box::new(a)),
        }
    }

    pub fn eval(&self, env: &Env) -> C64 {
        match self {
            Expr::Num(v) => C64::new(*v, 0.0),
            Expr::Imag => C64::new(0.0, 1.0),
            Expr::Var(Var::T) => C64::new(env.t, 0.0),
            Expr::Var(Var::X) => C64::new(env.x, 0.0),
            Expr::Var(Var::U(k)) => env.u.get(*k).copied().unwrap_or_default(),
            Expr::Neg(a) => -a.eval(env),
            Expr::Add(a, b) => a.eval(env) + b.eval(env),
            Expr::Sub(a, b) => a.eval(env) - b.eval(env),
            Expr::Mul(a, b) => a.eval(env) * b.eval(env),
            Expr::Div(a, b) => a.eval(env) / b.eval(env),
            Expr::Pow(a, n) => a.eval(env).powi(*n),
            Expr::Call(f, a) => {
                let v = a.eval(env);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Re => C64::new(v.re, 0.0),
                    Func::Im => C64::new(v.im, 0.0),
                    Func::Conj => v.conj(),
                }
            }
        }
    }

    pub fn eval_tx(&self, t: f64, x: f64) -> C64 {
        self.eval(&Env::tx(t, x))
    }

    pub fn depends_on_state(&self) -> bool {
        match self {
            Expr::Var(Var::U(_)) => true,
            Expr::Num(_) | Expr::Imag | Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_state(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_state() || b.depends_on_state()
            }
        }
    }

    /// Largest state index referenced, plus one.
    pub fn state_arity(&self) -> usize {
        match self {
            Expr::Var(Var::U(k)) => k + 1,
            Expr::Num(_) | Expr::Imag | Expr::Var(_) => 0,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.state_arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.state_arity().max(b.state_arity())
            }
        }
    }

    /// Symbolic derivative with respect to `t` or `x`. State variables are
    /// treated as independent of `(t, x)`.
    pub fn diff(&self, v: Var) -> Expr {
        match self {
            Expr::Num(_) | Expr::Imag => Expr::zero(),
            Expr::Var(w) => {
                if *w == v {
                    Expr::Num(1.0)
                } else {
                    Expr::zero()
                }
            }
            Expr::Neg(a) => Expr::neg(a.diff(v)),
            Expr::Add(a, b) => Expr::add(a.diff(v), b.diff(v)),
            Expr::Sub(a, b) => Expr::sub(a.diff(v), b.diff(v)),
            Expr::Mul(a, b) => Expr::add(Expr::mul(a.diff(v), (**b).clone()), Expr::mul((**a).clone(), b.diff(v))),
            Expr::Div(a, b) => {
                let num = Expr::sub(Expr::mul(a.diff(v), (**b).clone()), Expr::mul((**a).clone(), b.diff(v)));
                if num.is_zero() {
                    Expr::zero()
                } else {
                    Expr::div(num, Expr::pow((**b).clone(), 2))
                }
            }
            Expr::Pow(a, n) => {
                let da = a.diff(v);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    Expr::mul(Expr::mul(Expr::Num(*n as f64), Expr::pow((**a).clone(), n - 1)), da)
                }
            }
            Expr::Call(f, a) => {
                let da = a.diff(v);
                if da.is_zero() {
                    return Expr::zero();
                }
                match f {
                    Func::Sin => Expr::mul(Expr::call(Func::Cos, (**a).clone()), da),
                    Func::Cos => Expr::neg(Expr::mul(Expr::call(Func::Sin, (**a).clone()), da)),
                    Func::Exp => Expr::mul(Expr::call(Func::Exp, (**a).clone()), da),
                    Func::Re | Func::Im | Func::Conj => Expr::call(*f, da),
                }
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(v) if *v < 0.0 => 0,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.precedence();
        let paren = p < min;
        if paren {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(v) => write!(f, "{v:?}")?,
            Expr::Imag => write!(f, "i")?,
            Expr::Var(Var::T) => write!(f, "t")?,
            Expr::Var(Var::X) => write!(f, "x")?,
            Expr::Var(Var::U(k)) => write!(f, "u{}", k + 1)?,
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 3)?;
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, " {} ", if matches!(self, Expr::Add(..)) { '+' } else { '-' })?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "{}", if matches!(self, Expr::Mul(..)) { '*' } else { '/' })?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Pow(a, n) => {
                a.fmt_prec(f, 5)?;
                write!(f, "^{n}")?;
            }
            Expr::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

/// Exponents of `u` and `conj(u)` in a monomial.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial {
    pub u: Vec<u8>,
    pub ubar: Vec<u8>,
}

impl Monomial {
    pub fn constant(n: usize) -> Monomial {
        Monomial { u: vec![0; n], ubar: vec![0; n] }
    }

    pub fn degree(&self) -> u32 {
        self.u.iter().chain(&self.ubar).map(|&e| e as u32).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.degree() == 0
    }

    fn times(&self, other: &Monomial) -> Monomial {
        Monomial {
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            ubar: self.ubar.iter().zip(&other.ubar).map(|(a, b)| a + b).collect(),
        }
    }

    fn conjugate(&self) -> Monomial {
        Monomial { u: self.ubar.clone(), ubar: self.u.clone() }
    }

    pub fn eval(&self, u: &[C64]) -> C64 {
        let mut acc = C64::new(1.0, 0.0);
        for (k, (&a, &b)) in self.u.iter().zip(&self.ubar).enumerate() {
            if a > 0 {
                acc *= u[k].powi(a as i32);
            }
            if b > 0 {
                acc *= u[k].conj().powi(b as i32);
            }
        }
        acc
    }
}

/// Polynomial in `(u, conj(u))` with `(t, x)`-dependent coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub n: usize,
    pub terms: BTreeMap<Monomial, Expr>,
}

impl Poly {
    pub fn zero(n: usize) -> Poly {
        Poly { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Expr) -> Poly {
        let mut p = Poly::zero(n);
        p.push(Monomial::constant(n), c);
        p
    }

    fn push(&mut self, m: Monomial, c: Expr) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.remove(&m);
        let merged = match entry {
            Some(prev) => Expr::add(prev, c),
            None => c,
        };
        if !merged.is_zero() {
            self.terms.insert(m, merged);
        }
    }

    /// Expand a state-dependent expression into a polynomial.
    pub fn from_expr(e: &Expr, n: usize) -> Result<Poly, ExprError> {
        if !e.depends_on_state() {
            return Ok(Poly::constant(n, e.clone()));
        }
        Ok(match e {
            Expr::Var(Var::U(k)) => {
                if *k >= n {
                    return Err(ExprError::StateIndex { index: k + 1, n });
                }
                let mut m = Monomial::constant(n);
                m.u[*k] = 1;
                let mut p = Poly::zero(n);
                p.push(m, Expr::Num(1.0));
                p
            }
            Expr::Neg(a) => Poly::from_expr(a, n)?.scale(&Expr::Num(-1.0)),
            Expr::Add(a, b) => Poly::from_expr(a, n)?.plus(&Poly::from_expr(b, n)?),
            Expr::Sub(a, b) => Poly::from_expr(a, n)?.plus(&Poly::from_expr(b, n)?.scale(&Expr::Num(-1.0))),
            Expr::Mul(a, b) => Poly::from_expr(a, n)?.times(&Poly::from_expr(b, n)?),
            Expr::Div(a, b) => {
                if b.depends_on_state() {
                    return Err(ExprError::NotPolynomial(format!("division by `{b}`")));
                }
                let mut p = Poly::from_expr(a, n)?;
                for c in p.terms.values_mut() {
                    *c = Expr::div(c.clone(), (**b).clone());
                }
                p
            }
            Expr::Pow(a, k) => {
                if *k < 0 {
                    return Err(ExprError::NotPolynomial(format!("negative power of `{a}`")));
                }
                let base = Poly::from_expr(a, n)?;
                let mut acc = Poly::constant(n, Expr::Num(1.0));
                for _ in 0..*k {
                    acc = acc.times(&base);
                }
                acc
            }
            Expr::Call(Func::Conj, a) => Poly::from_expr(a, n)?.conjugate(),
            Expr::Call(Func::Re, a) => {
                let p = Poly::from_expr(a, n)?;
                p.plus(&p.conjugate()).scale(&Expr::Num(0.5))
            }
            Expr::Call(Func::Im, a) => {
                let p = Poly::from_expr(a, n)?;
                // (p - conj p) / (2i) = -i/2 (p - conj p)
                p.plus(&p.conjugate().scale(&Expr::Num(-1.0))).scale(&Expr::mul(Expr::Num(-0.5), Expr::Imag))
            }
            Expr::Call(f, _) => {
                return Err(ExprError::NotPolynomial(format!("`{}` applied to a state-dependent argument", f.name())))
            }
            Expr::Num(_) | Expr::Imag | Expr::Var(_) => unreachable!("state-free handled above"),
        })
    }

    pub fn plus(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.push(m.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, s: &Expr) -> Poly {
        let mut out = Poly::zero(self.n);
        for (m, c) in &self.terms {
            out.push(m.clone(), Expr::mul(s.clone(), c.clone()));
        }
        out
    }

    pub fn times(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.n);
        for (m1, c1) in &self.terms {
            for (m2, c2) in &other.terms {
                out.push(m1.times(m2), Expr::mul(c1.clone(), c2.clone()));
            }
        }
        out
    }

    pub fn conjugate(&self) -> Poly {
        let mut out = Poly::zero(self.n);
        for (m, c) in &self.terms {
            out.push(m.conjugate(), Expr::call(Func::Conj, c.clone()));
        }
        out
    }

    pub fn is_state_free(&self) -> bool {
        self.terms.keys().all(Monomial::is_constant)
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn eval(&self, t: f64, x: f64, u: &[C64]) -> C64 {
        self.terms.iter().map(|(m, c)| c.eval_tx(t, x) * m.eval(u)).sum()
    }

    /// Partial derivative with respect to `u_k` (`conj = false`) or
    /// `conj(u_k)` (`conj = true`), in the Wirtinger sense.
    pub fn partial(&self, k: usize, conj: bool) -> Poly {
        let mut out = Poly::zero(self.n);
        for (m, c) in &self.terms {
            let e = if conj { m.ubar[k] } else { m.u[k] };
            if e == 0 {
                continue;
            }
            let mut dm = m.clone();
            if conj {
                dm.ubar[k] -= 1;
            } else {
                dm.u[k] -= 1;
            }
            out.push(dm, Expr::mul(Expr::Num(e as f64), c.clone()));
        }
        out
    }

    pub fn diff_tx(&self, v: Var) -> Poly {
        let mut out = Poly::zero(self.n);
        for (m, c) in &self.terms {
            out.push(m.clone(), c.diff(v));
        }
        out
    }

    /// Constant-in-state part, i.e. the value at `u = 0`.
    pub fn at_zero(&self) -> Expr {
        self.terms.get(&Monomial::constant(self.n)).cloned().unwrap_or_else(Expr::zero)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> C64 {
        parse_expr(s).unwrap().eval_tx(0.0, x)
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("1+2*3", 0.0), C64::new(7.0, 0.0));
        assert_eq!(ev("-2^2", 0.0), C64::new(-4.0, 0.0));
        assert_eq!(ev("(1+2)*3", 0.0), C64::new(9.0, 0.0));
        assert_eq!(ev("8/2/2", 0.0), C64::new(2.0, 0.0));
        assert_eq!(ev("2-3-4", 0.0), C64::new(-5.0, 0.0));
    }

    #[test]
    fn imaginary_literal() {
        let v = ev("x^2 + i*x", 2.0);
        assert_eq!(v, C64::new(4.0, 2.0));
        assert_eq!(ev("im(x^2 + i*x)", 2.0), C64::new(2.0, 0.0));
    }

    #[test]
    fn sin_coefficient() {
        let e = parse_expr("1 + 0.3*sin(x)").unwrap();
        assert!(
            matches!(&e, Expr::Add(_, b) if matches!(&**b, Expr::Mul(_, s) if matches!(&**s, Expr::Call(Func::Sin, _))))
        );
        assert_eq!(e.eval_tx(0.0, 0.0), C64::new(1.0, 0.0));
    }

    #[test]
    fn syntax_error_position() {
        match parse_expr("1 + *") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        assert!(parse_expr("").is_err());
        assert!(parse_expr("sin x").is_err());
        assert!(parse_expr("x^1.5").is_err());
        assert!(parse_expr("foo").is_err());
        assert!(parse_expr("(x").is_err());
    }

    #[test]
    fn cubic_monomial() {
        let e = parse_expr("conj(u1)*u2^2").unwrap();
        let p = Poly::from_expr(&e, 2).unwrap();
        assert_eq!(p.terms.len(), 1);
        let m = p.terms.keys().next().unwrap();
        assert_eq!(m.u, vec![0, 2]);
        assert_eq!(m.ubar, vec![1, 0]);
        let u = [C64::new(1.0, 2.0), C64::new(0.5, -1.0)];
        let direct = e.eval(&Env { t: 0.0, x: 0.0, u: &u });
        assert!((p.eval(0.0, 0.0, &u) - direct).norm() < 1e-14);
    }

    #[test]
    fn re_im_of_state_expand() {
        let e = parse_expr("re(u1)*x + im(u1)").unwrap();
        let p = Poly::from_expr(&e, 1).unwrap();
        let u = [C64::new(0.7, -0.2)];
        let direct = e.eval(&Env { t: 0.0, x: 1.5, u: &u });
        assert!((p.eval(0.0, 1.5, &u) - direct).norm() < 1e-14);
        assert!(Poly::from_expr(&parse_expr("sin(u1)").unwrap(), 1).is_err());
        assert!(Poly::from_expr(&parse_expr("1/u1").unwrap(), 1).is_err());
        assert!(Poly::from_expr(&parse_expr("u3").unwrap(), 2).is_err());
    }

    #[test]
    fn wirtinger_partials() {
        let e = parse_expr("conj(u1)*u1*u1 + 2*x*u2").unwrap();
        let p = Poly::from_expr(&e, 2).unwrap();
        let u = [C64::new(0.3, 0.4), C64::new(-0.1, 0.2)];
        // d/du1 (|u1|^2 u1) = 2 conj(u1) u1
        let d = p.partial(0, false).eval(0.0, 2.0, &u);
        assert!((d - 2.0 * u[0].conj() * u[0]).norm() < 1e-14);
        let db = p.partial(0, true).eval(0.0, 2.0, &u);
        assert!((db - u[0] * u[0]).norm() < 1e-14);
        assert!((p.partial(1, false).eval(0.0, 2.0, &u) - C64::new(4.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn symbolic_derivative_matches_fd() {
        let exprs = ["1 + 0.3*sin(x)", "exp(-x^2)*cos(2*x)", "x^3/(1+x^2)", "re(exp(i*x))*t"];
        for s in exprs {
            let e = parse_expr(s).unwrap();
            let dx = e.diff(Var::X);
            let dt = e.diff(Var::T);
            let (t, x, h) = (0.4, 0.7, 1e-5);
            let fdx = (e.eval_tx(t, x + h) - e.eval_tx(t, x - h)) / (2.0 * h);
            let fdt = (e.eval_tx(t + h, x) - e.eval_tx(t - h, x)) / (2.0 * h);
            assert!((dx.eval_tx(t, x) - fdx).norm() < 1e-8, "{s}");
            assert!((dt.eval_tx(t, x) - fdt).norm() < 1e-8, "{s}");
        }
    }

    #[test]
    fn display_reparses() {
        for s in ["1+2*3", "-(x-1)^3", "conj(u1)*u2^2 - i*x/(1+t)", "2-(3-4)", "x^-2", "sin(-x)"] {
            let e = parse_expr(s).unwrap();
            let again = parse_expr(&e.to_string()).unwrap();
            assert_eq!(e, again, "{s} -> {e}");
        }
    }

    fn expr_text() -> impl proptest::strategy::Strategy<Value = String> {
        use proptest::prelude::*;
        let leaf = prop_oneof![
            Just("x".to_string()),
            Just("t".to_string()),
            Just("i".to_string()),
            (-4i32..5).prop_map(|k| format!("{}", k as f64 / 2.0)),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) + ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) - ({b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a}) * ({b})")),
                (inner.clone(), 0u32..4).prop_map(|(a, n)| format!("({a})^{n}")),
                inner.clone().prop_map(|a| format!("exp({a})")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.prop_map(|a| format!("-({a})")),
            ]
        })
    }

    proptest::proptest! {
        #[test]
        fn evaluation_total_and_display_round_trips(text in expr_text(), t in -1.0f64..1.0, x in -1.0f64..1.0) {
            let e = parse_expr(&text).unwrap();
            let v = e.eval_tx(t, x);
            proptest::prop_assert!(v.re.is_finite() && v.im.is_finite());
            let again = parse_expr(&e.to_string()).unwrap().eval_tx(t, x);
            proptest::prop_assert!((again - v).norm() <= 1e-12 * (1.0 + v.norm()), "{} -> {}: {} vs {}", text, e, v, again);
        }
    }
}

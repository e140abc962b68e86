//! Scalar expressions over chart coordinates.
//!
//! Metric entries, conformal factors, vector-field components and transition
//! angles all arrive as text. [`Expr::parse`] turns the text into a tree whose
//! variables and parameters are resolved to slot indices, and
//! [`Expr::eval_jet2`] evaluates value, gradient and Hessian in one pass using
//! truncated second-order Taylor arithmetic ([`Jet2`]).
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr    := term { ("+"|"-") term } ;
//! term    := factor { ("*"|"/") factor } ;
//! factor  := unary [ "^" factor ] ;
//! unary   := "-" unary | primary ;
//! primary := NUMBER | IDENT | IDENT "(" expr { "," expr } ")" | "(" expr ")" ;
//! ```
//!
//! Note that `-x^2` parses as `(-x)^2`; write `-(x^2)` for the negated square.

use std::fmt;
use thiserror::Error;

/// Largest coordinate dimension a [`Jet2`] can carry.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Atan,
    Atan2,
    Abs,
    Pow,
}

impl Func {
    const ALL: [Func; 13] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Sqrt,
        Func::Sinh,
        Func::Cosh,
        Func::Tanh,
        Func::Atan,
        Func::Atan2,
        Func::Abs,
        Func::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Atan2 => "atan2",
            Func::Abs => "abs",
            Func::Pow => "pow",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Atan2 | Func::Pow => 2,
            _ => 1,
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        Func::ALL.iter().copied().find(|f| f.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

impl Constant {
    fn value(self) -> f64 {
        match self {
            Constant::Pi => std::f64::consts::PI,
            Constant::E => std::f64::consts::E,
        }
    }
}

/// Expression tree. Variables and parameters are slot indices into the lists
/// supplied at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Param(usize),
    Const(Constant),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("unknown identifier \"{name}\" at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("function {name} takes {expected} argument(s), got {got} (offset {offset})")]
    Arity {
        offset: usize,
        name: String,
        expected: usize,
        got: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in {op}: {subexpr}")]
    Domain { op: &'static str, subexpr: String },
    #[error("point has {got} coordinates, expression expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("parameter slot {0} is unbound")]
    UnboundParam(usize),
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
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
    fn skip_ws(&mut self) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Returns the next token and its starting offset.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let bytes = self.src.as_bytes();
        let start = self.pos;
        if start >= bytes.len() {
            return Ok((Tok::End, start));
        }
        let c = bytes[start];
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &self.src[start..end];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                expected: "a decimal number".into(),
            })?;
            self.pos = end;
            return Ok((Tok::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
            {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        self.pos = start + 1;
        let tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            _ => {
                return Err(ParseError::Syntax {
                    offset: start,
                    expected: "an operator, number, identifier or parenthesis".into(),
                })
            }
        };
        Ok((tok, start))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
    vars: &'a [&'a str],
    params: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn advance(&mut self) -> Result<(), ParseError> {
        let (tok, offset) = self.lexer.next()?;
        self.tok = tok;
        self.offset = offset;
        Ok(())
    }

    fn expected(&self, what: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.offset,
            expected: what.to_string(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if self.tok == Tok::Op('^') {
            self.advance()?;
            let exponent = self.factor()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Op('-') {
            self.advance()?;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.expected("\")\""));
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let at = self.offset;
                self.advance()?;
                if self.tok == Tok::LParen {
                    let func = Func::lookup(&name).ok_or_else(|| ParseError::UnknownIdentifier {
                        offset: at,
                        name: name.clone(),
                    })?;
                    self.advance()?;
                    let mut args = vec![self.expr()?];
                    while self.tok == Tok::Comma {
                        self.advance()?;
                        args.push(self.expr()?);
                    }
                    if self.tok != Tok::RParen {
                        return Err(self.expected("\",\" or \")\""));
                    }
                    self.advance()?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Arity {
                            offset: at,
                            name,
                            expected: func.arity(),
                            got: args.len(),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                if let Some(i) = self.params.iter().position(|p| *p == name) {
                    return Ok(Expr::Param(i));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Const(Constant::Pi)),
                    "e" => Ok(Expr::Const(Constant::E)),
                    _ => Err(ParseError::UnknownIdentifier { offset: at, name }),
                }
            }
            _ => Err(self.expected("a number, identifier, \"-\" or \"(\"")),
        }
    }
}

impl Expr {
    /// Parses `text`, resolving identifiers against `vars`, then `params`,
    /// then the constants `pi` and `e`.
    pub fn parse(text: &str, vars: &[&str], params: &[&str]) -> Result<Expr, ParseError> {
        let mut parser = Parser {
            lexer: Lexer { src: text, pos: 0 },
            tok: Tok::End,
            offset: 0,
            vars,
            params,
        };
        parser.advance()?;
        let e = parser.expr()?;
        if parser.tok != Tok::End {
            return Err(parser.expected("an operator or end of input"));
        }
        Ok(e)
    }

    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn call(f: Func, args: Vec<Expr>) -> Expr {
        Expr::Call(f, args)
    }

    /// Replaces every variable slot `i` with `replacements[i]`.
    pub fn substitute(&self, replacements: &[Expr]) -> Expr {
        match self {
            Expr::Var(i) => replacements[*i].clone(),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(replacements))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.substitute(replacements)),
                Box::new(b.substitute(replacements)),
            ),
            Expr::Call(f, args) => {
                Expr::Call(*f, args.iter().map(|a| a.substitute(replacements)).collect())
            }
            other => other.clone(),
        }
    }

    /// Replaces parameter slots with literal values.
    pub fn bind_params(&self, values: &[f64]) -> Expr {
        match self {
            Expr::Param(i) => Expr::Num(values[*i]),
            Expr::Neg(a) => Expr::Neg(Box::new(a.bind_params(values))),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.bind_params(values)),
                Box::new(b.bind_params(values)),
            ),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.bind_params(values)).collect()),
            other => other.clone(),
        }
    }

    /// Value of the expression when it references no variables or parameters.
    pub fn constant_value(&self) -> Option<f64> {
        if self.references_variables() {
            return None;
        }
        self.eval(&[], &[]).ok()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    fn references_variables(&self) -> bool {
        match self {
            Expr::Var(_) | Expr::Param(_) => true,
            Expr::Num(_) | Expr::Const(_) => false,
            Expr::Neg(a) => a.references_variables(),
            Expr::Bin(_, a, b) => a.references_variables() || b.references_variables(),
            Expr::Call(_, args) => args.iter().any(|a| a.references_variables()),
        }
    }

    /// Highest variable slot referenced, plus one.
    pub fn var_count(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Num(_) | Expr::Const(_) | Expr::Param(_) => 0,
            Expr::Neg(a) => a.var_count(),
            Expr::Bin(_, a, b) => a.var_count().max(b.var_count()),
            Expr::Call(_, args) => args.iter().map(|a| a.var_count()).max().unwrap_or(0),
        }
    }

    /// Prints the tree with the given names. Binary operations are fully
    /// parenthesized so re-parsing yields the identical tree.
    pub fn to_text(&self, vars: &[&str], params: &[&str]) -> String {
        let mut out = String::new();
        self.write_text(&mut out, &|i| vars.get(i).map(|s| s.to_string()), &|i| {
            params.get(i).map(|s| s.to_string())
        });
        out
    }

    fn write_text(
        &self,
        out: &mut String,
        var: &dyn Fn(usize) -> Option<String>,
        param: &dyn Fn(usize) -> Option<String>,
    ) {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 || v.is_sign_negative() {
                    out.push_str(&format!("({v:?})"));
                } else {
                    out.push_str(&format!("{v:?}"));
                }
            }
            Expr::Var(i) => out.push_str(&var(*i).unwrap_or_else(|| format!("x{}", i + 1))),
            Expr::Param(i) => out.push_str(&param(*i).unwrap_or_else(|| format!("p{}", i + 1))),
            Expr::Const(Constant::Pi) => out.push_str("pi"),
            Expr::Const(Constant::E) => out.push('e'),
            Expr::Neg(a) => {
                out.push_str("(-");
                a.write_text(out, var, param);
                out.push(')');
            }
            Expr::Bin(op, a, b) => {
                out.push('(');
                a.write_text(out, var, param);
                out.push(' ');
                out.push_str(op.symbol());
                out.push(' ');
                b.write_text(out, var, param);
                out.push(')');
            }
            Expr::Call(f, args) => {
                out.push_str(f.name());
                out.push('(');
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    a.write_text(out, var, param);
                }
                out.push(')');
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        self.write_text(&mut out, &|_| None, &|_| None);
        f.write_str(&out)
    }
}

// ---------------------------------------------------------------------------
// Second-order jets
// ---------------------------------------------------------------------------

/// Value, gradient and Hessian of a scalar at a point, with respect to `dim`
/// coordinates. Entries beyond `dim` are kept at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub dim: usize,
    pub value: f64,
    grad: [f64; MAX_DIM],
    hess: [[f64; MAX_DIM]; MAX_DIM],
}

impl Jet2 {
    pub fn constant(dim: usize, value: f64) -> Jet2 {
        Jet2 {
            dim,
            value,
            grad: [0.0; MAX_DIM],
            hess: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn variable(dim: usize, index: usize, value: f64) -> Jet2 {
        let mut j = Jet2::constant(dim, value);
        j.grad[index] = 1.0;
        j
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad[..self.dim]
    }

    pub fn grad(&self, i: usize) -> f64 {
        self.grad[i]
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.hess[i][j]
    }

    pub fn hessian(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.hess[i][..self.dim].to_vec())
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad[..self.dim].iter().all(|g| g.is_finite())
            && (0..self.dim).all(|i| self.hess[i][..self.dim].iter().all(|h| h.is_finite()))
    }

    /// Composition with a scalar function given its first two derivatives.
    fn chain(&self, f: f64, df: f64, d2f: f64) -> Jet2 {
        let n = self.dim;
        let mut out = Jet2::constant(n, f);
        for i in 0..n {
            out.grad[i] = df * self.grad[i];
        }
        for i in 0..n {
            for j in i..n {
                let h = df * self.hess[i][j] + d2f * self.grad[i] * self.grad[j];
                out.hess[i][j] = h;
                out.hess[j][i] = h;
            }
        }
        out
    }

    fn add(&self, o: &Jet2) -> Jet2 {
        let n = self.dim;
        let mut out = Jet2::constant(n, self.value + o.value);
        for i in 0..n {
            out.grad[i] = self.grad[i] + o.grad[i];
            for j in 0..n {
                out.hess[i][j] = self.hess[i][j] + o.hess[i][j];
            }
        }
        out
    }

    fn sub(&self, o: &Jet2) -> Jet2 {
        let n = self.dim;
        let mut out = Jet2::constant(n, self.value - o.value);
        for i in 0..n {
            out.grad[i] = self.grad[i] - o.grad[i];
            for j in 0..n {
                out.hess[i][j] = self.hess[i][j] - o.hess[i][j];
            }
        }
        out
    }

    fn neg(&self) -> Jet2 {
        self.chain(-self.value, -1.0, 0.0)
    }

    fn mul(&self, o: &Jet2) -> Jet2 {
        let n = self.dim;
        let mut out = Jet2::constant(n, self.value * o.value);
        for i in 0..n {
            out.grad[i] = self.grad[i] * o.value + o.grad[i] * self.value;
        }
        for i in 0..n {
            for j in i..n {
                let h = self.hess[i][j] * o.value
                    + o.hess[i][j] * self.value
                    + self.grad[i] * o.grad[j]
                    + self.grad[j] * o.grad[i];
                out.hess[i][j] = h;
                out.hess[j][i] = h;
            }
        }
        out
    }

    fn recip(&self) -> Jet2 {
        let v = self.value;
        self.chain(1.0 / v, -1.0 / (v * v), 2.0 / (v * v * v))
    }

    /// Binary function f(a, b) with partials (fa, fb) and second partials.
    #[allow(clippy::too_many_arguments)]
    fn chain2(a: &Jet2, b: &Jet2, f: f64, fa: f64, fb: f64, faa: f64, fab: f64, fbb: f64) -> Jet2 {
        let n = a.dim;
        let mut out = Jet2::constant(n, f);
        for i in 0..n {
            out.grad[i] = fa * a.grad[i] + fb * b.grad[i];
        }
        for i in 0..n {
            for j in i..n {
                let h = fa * a.hess[i][j]
                    + fb * b.hess[i][j]
                    + faa * a.grad[i] * a.grad[j]
                    + fab * (a.grad[i] * b.grad[j] + b.grad[i] * a.grad[j])
                    + fbb * b.grad[i] * b.grad[j];
                out.hess[i][j] = h;
                out.hess[j][i] = h;
            }
        }
        out
    }

    fn has_zero_derivatives(&self) -> bool {
        self.grad[..self.dim].iter().all(|g| *g == 0.0)
            && (0..self.dim).all(|i| self.hess[i][..self.dim].iter().all(|h| *h == 0.0))
    }
}

fn domain(op: &'static str, e: &Expr) -> EvalError {
    EvalError::Domain {
        op,
        subexpr: e.to_string(),
    }
}

fn integer_exponent(v: f64) -> Option<i32> {
    if v.fract() == 0.0 && v.abs() <= 1024.0 {
        Some(v as i32)
    } else {
        None
    }
}

fn pow_jet(base: &Jet2, exponent: &Jet2, whole: &Expr) -> Result<Jet2, EvalError> {
    let a = base.value;
    if exponent.has_zero_derivatives() {
        if let Some(n) = integer_exponent(exponent.value) {
            if a == 0.0 && n < 0 {
                return Err(domain("power", whole));
            }
            let nf = n as f64;
            let f = a.powi(n);
            let df = if n == 0 { 0.0 } else { nf * a.powi(n - 1) };
            let d2f = if n == 0 || n == 1 {
                0.0
            } else {
                nf * (nf - 1.0) * a.powi(n - 2)
            };
            return Ok(base.chain(f, df, d2f));
        }
        if a <= 0.0 {
            return Err(domain("power", whole));
        }
        let p = exponent.value;
        return Ok(base.chain(a.powf(p), p * a.powf(p - 1.0), p * (p - 1.0) * a.powf(p - 2.0)));
    }
    if a <= 0.0 {
        return Err(domain("power", whole));
    }
    // a^b = exp(b ln a)
    let b = exponent.value;
    let f = a.powf(b);
    let ln = a.ln();
    let fa = b * a.powf(b - 1.0);
    let fb = f * ln;
    let faa = b * (b - 1.0) * a.powf(b - 2.0);
    let fab = a.powf(b - 1.0) * (1.0 + b * ln);
    let fbb = f * ln * ln;
    Ok(Jet2::chain2(base, exponent, f, fa, fb, faa, fab, fbb))
}

fn pow_value(a: f64, b: f64, whole: &Expr) -> Result<f64, EvalError> {
    if let Some(n) = integer_exponent(b) {
        if a == 0.0 && n < 0 {
            return Err(domain("power", whole));
        }
        return Ok(a.powi(n));
    }
    if a <= 0.0 {
        return Err(domain("power", whole));
    }
    Ok(a.powf(b))
}

impl Expr {
    /// Plain value at `point`.
    pub fn eval(&self, point: &[f64], params: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *point.get(*i).ok_or(EvalError::Dimension {
                expected: i + 1,
                got: point.len(),
            })?,
            Expr::Param(i) => *params.get(*i).ok_or(EvalError::UnboundParam(*i))?,
            Expr::Const(c) => c.value(),
            Expr::Neg(a) => -a.eval(point, params)?,
            Expr::Bin(op, a, b) => {
                let x = a.eval(point, params)?;
                let y = b.eval(point, params)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(domain("division", self));
                        }
                        x / y
                    }
                    BinOp::Pow => pow_value(x, y, self)?,
                }
            }
            Expr::Call(f, args) => {
                let x = args[0].eval(point, params)?;
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Tan => x.tan(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(domain("log", self));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(domain("sqrt", self));
                        }
                        x.sqrt()
                    }
                    Func::Sinh => x.sinh(),
                    Func::Cosh => x.cosh(),
                    Func::Tanh => x.tanh(),
                    Func::Atan => x.atan(),
                    Func::Abs => x.abs(),
                    Func::Atan2 => {
                        let xx = args[1].eval(point, params)?;
                        if x == 0.0 && xx == 0.0 {
                            return Err(domain("atan2", self));
                        }
                        x.atan2(xx)
                    }
                    Func::Pow => {
                        let y = args[1].eval(point, params)?;
                        pow_value(x, y, self)?
                    }
                }
            }
        })
    }

    /// Value, gradient and Hessian at `point` (length = number of variables).
    pub fn eval_jet2(&self, point: &[f64], params: &[f64]) -> Result<Jet2, EvalError> {
        if point.len() > MAX_DIM {
            return Err(EvalError::Dimension {
                expected: MAX_DIM,
                got: point.len(),
            });
        }
        let jet = self.jet(point, params)?;
        if !jet.is_finite() {
            return Err(domain("evaluation (non-finite result)", self));
        }
        Ok(jet)
    }

    fn jet(&self, point: &[f64], params: &[f64]) -> Result<Jet2, EvalError> {
        let n = point.len();
        Ok(match self {
            Expr::Num(v) => Jet2::constant(n, *v),
            Expr::Var(i) => {
                let v = *point.get(*i).ok_or(EvalError::Dimension {
                    expected: i + 1,
                    got: n,
                })?;
                Jet2::variable(n, *i, v)
            }
            Expr::Param(i) => Jet2::constant(n, *params.get(*i).ok_or(EvalError::UnboundParam(*i))?),
            Expr::Const(c) => Jet2::constant(n, c.value()),
            Expr::Neg(a) => a.jet(point, params)?.neg(),
            Expr::Bin(op, a, b) => {
                let x = a.jet(point, params)?;
                let y = b.jet(point, params)?;
                match op {
                    BinOp::Add => x.add(&y),
                    BinOp::Sub => x.sub(&y),
                    BinOp::Mul => x.mul(&y),
                    BinOp::Div => {
                        if y.value == 0.0 {
                            return Err(domain("division", self));
                        }
                        x.mul(&y.recip())
                    }
                    BinOp::Pow => pow_jet(&x, &y, self)?,
                }
            }
            Expr::Call(f, args) => {
                let x = args[0].jet(point, params)?;
                let v = x.value;
                match f {
                    Func::Sin => x.chain(v.sin(), v.cos(), -v.sin()),
                    Func::Cos => x.chain(v.cos(), -v.sin(), -v.cos()),
                    Func::Tan => {
                        let t = v.tan();
                        let s2 = 1.0 + t * t;
                        x.chain(t, s2, 2.0 * t * s2)
                    }
                    Func::Exp => {
                        let e = v.exp();
                        x.chain(e, e, e)
                    }
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(domain("log", self));
                        }
                        x.chain(v.ln(), 1.0 / v, -1.0 / (v * v))
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(domain("sqrt", self));
                        }
                        let s = v.sqrt();
                        x.chain(s, 0.5 / s, -0.25 / (s * v))
                    }
                    Func::Sinh => x.chain(v.sinh(), v.cosh(), v.sinh()),
                    Func::Cosh => x.chain(v.cosh(), v.sinh(), v.cosh()),
                    Func::Tanh => {
                        let t = v.tanh();
                        let s = 1.0 - t * t;
                        x.chain(t, s, -2.0 * t * s)
                    }
                    Func::Atan => {
                        let q = 1.0 / (1.0 + v * v);
                        x.chain(v.atan(), q, -2.0 * v * q * q)
                    }
                    Func::Abs => {
                        let s = if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        x.chain(v.abs(), s, 0.0)
                    }
                    Func::Atan2 => {
                        // atan2(y, x) with y = first argument
                        let xx = args[1].jet(point, params)?;
                        let (yv, xv) = (v, xx.value);
                        let r2 = yv * yv + xv * xv;
                        if r2 == 0.0 {
                            return Err(domain("atan2", self));
                        }
                        let r4 = r2 * r2;
                        Jet2::chain2(
                            &x,
                            &xx,
                            yv.atan2(xv),
                            xv / r2,
                            -yv / r2,
                            -2.0 * xv * yv / r4,
                            (yv * yv - xv * xv) / r4,
                            2.0 * xv * yv / r4,
                        )
                    }
                    Func::Pow => {
                        let y = args[1].jet(point, params)?;
                        pow_jet(&x, &y, self)?
                    }
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const V2: [&str; 2] = ["x1", "x2"];

    #[test]
    fn power_binds_tighter_than_product() {
        let e = Expr::parse("sin(x1)^2 * r^2", &V2, &["r"]).unwrap();
        match e {
            Expr::Bin(BinOp::Mul, lhs, rhs) => {
                assert!(matches!(*lhs, Expr::Bin(BinOp::Pow, _, _)));
                assert!(matches!(*rhs, Expr::Bin(BinOp::Pow, _, _)));
            }
            other => panic!("unexpected tree {other:?}"),
        }
    }

    #[test]
    fn power_is_right_associative() {
        let e = Expr::parse("2^3^2", &[], &[]).unwrap();
        assert_eq!(e.eval(&[], &[]).unwrap(), 512.0);
    }

    #[test]
    fn unary_minus_binds_inside_power() {
        let e = Expr::parse("-x1^2", &V2, &[]).unwrap();
        assert_eq!(e.eval(&[3.0, 0.0], &[]).unwrap(), 9.0);
        let e = Expr::parse("-(x1^2)", &V2, &[]).unwrap();
        assert_eq!(e.eval(&[3.0, 0.0], &[]).unwrap(), -9.0);
    }

    #[test]
    fn incomplete_input_reports_offset() {
        let err = Expr::parse("x1 +", &V2, &[]).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 4, .. }), "{err:?}");
    }

    #[test]
    fn unknown_function_is_named() {
        let err = Expr::parse("foo(x1)", &V2, &[]).unwrap_err();
        assert_eq!(
            err,
            ParseError::UnknownIdentifier {
                offset: 0,
                name: "foo".into()
            }
        );
        let err = Expr::parse("x1 + y", &V2, &[]).unwrap_err();
        assert!(matches!(err, ParseError::UnknownIdentifier { offset: 5, .. }));
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            Expr::parse("atan2(x1)", &V2, &[]),
            Err(ParseError::Arity { .. })
        ));
    }

    #[test]
    fn numbers_with_exponents() {
        let e = Expr::parse("1.5e-3 * 2E2 + .5", &[], &[]).unwrap();
        assert!((e.eval(&[], &[]).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn bilinear_jet() {
        let e = Expr::parse("x1*x2", &V2, &[]).unwrap();
        let j = e.eval_jet2(&[2.0, 3.0], &[]).unwrap();
        assert_eq!(j.value, 6.0);
        assert_eq!(j.gradient(), &[3.0, 2.0]);
        assert_eq!(j.hessian(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn sine_at_origin() {
        let e = Expr::parse("sin(x1)", &["x1"], &[]).unwrap();
        let j = e.eval_jet2(&[0.0], &[]).unwrap();
        assert_eq!(j.value, 0.0);
        assert_eq!(j.gradient(), &[1.0]);
        assert_eq!(j.hessian(), vec![vec![0.0]]);
    }

    #[test]
    fn gaussian_matches_finite_differences() {
        let e = Expr::parse("exp(x1^2)", &["x1"], &[]).unwrap();
        let x = 0.7;
        let h = 1e-5;
        let f = |t: f64| e.eval(&[t], &[]).unwrap();
        let fd1 = (f(x + h) - f(x - h)) / (2.0 * h);
        let fd2 = (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h);
        let j = e.eval_jet2(&[x], &[]).unwrap();
        assert!(((j.grad(0) - fd1) / fd1).abs() < 1e-6);
        assert!(((j.hess(0, 0) - fd2) / fd2).abs() < 1e-4);
    }

    #[test]
    fn negative_base_integer_power() {
        let e = Expr::parse("x1^3", &["x1"], &[]).unwrap();
        let j = e.eval_jet2(&[-2.0], &[]).unwrap();
        assert_eq!(j.value, -8.0);
        assert_eq!(j.grad(0), 12.0);
        assert_eq!(j.hess(0, 0), -12.0);
        let e = Expr::parse("x1^0.5", &["x1"], &[]).unwrap();
        assert!(matches!(e.eval_jet2(&[-2.0], &[]), Err(EvalError::Domain { .. })));
    }

    #[test]
    fn domain_errors_carry_subexpression() {
        let e = Expr::parse("1 + log(x1 - 1)", &["x1"], &[]).unwrap();
        match e.eval_jet2(&[0.5], &[]) {
            Err(EvalError::Domain { op, subexpr }) => {
                assert_eq!(op, "log");
                assert!(subexpr.contains("log"), "{subexpr}");
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        let e = Expr::parse("x1 / x2", &V2, &[]).unwrap();
        assert!(e.eval(&[1.0, 0.0], &[]).is_err());
        let e = Expr::parse("atan2(x1, x2)", &V2, &[]).unwrap();
        assert!(e.eval_jet2(&[0.0, 0.0], &[]).is_err());
        let e = Expr::parse("sqrt(x1)", &["x1"], &[]).unwrap();
        assert!(e.eval(&[-1.0], &[]).is_err());
    }

    #[test]
    fn atan2_derivatives() {
        let e = Expr::parse("atan2(x2, x1)", &V2, &[]).unwrap();
        let (x, y) = (0.3, -0.8);
        let j = e.eval_jet2(&[x, y], &[]).unwrap();
        let r2 = x * x + y * y;
        assert!((j.grad(0) + y / r2).abs() < 1e-15);
        assert!((j.grad(1) - x / r2).abs() < 1e-15);
        // atan2 is harmonic
        assert!((j.hess(0, 0) + j.hess(1, 1)).abs() < 1e-14);
    }

    #[test]
    fn params_and_substitution() {
        let e = Expr::parse("r^2 * x1", &["x1"], &["r"]).unwrap();
        assert_eq!(e.eval(&[3.0], &[2.0]).unwrap(), 12.0);
        let bound = e.bind_params(&[2.0]);
        assert_eq!(bound.eval(&[3.0], &[]).unwrap(), 12.0);
        let sub = bound.substitute(&[Expr::parse("u + 1", &["u"], &[]).unwrap()]);
        assert_eq!(sub.eval(&[2.0], &[]).unwrap(), 12.0);
        assert_eq!(Expr::parse("2*pi", &[], &[]).unwrap().constant_value(), Some(2.0 * std::f64::consts::PI));
    }

    #[test]
    fn printing_round_trips() {
        let vars = ["x1", "x2"];
        for text in [
            "sin(x1)^2 * r^2",
            "-x1^2 + atan2(x2, -x1) / (1 + e)",
            "pow(x1, 2.5e-3) - -(-x2)",
            "2^3^x1",
        ] {
            let e = Expr::parse(text, &vars, &["r"]).unwrap();
            let printed = e.to_text(&vars, &["r"]);
            let again = Expr::parse(&printed, &vars, &["r"]).unwrap();
            assert_eq!(e, again, "{text} -> {printed}");
        }
    }
}

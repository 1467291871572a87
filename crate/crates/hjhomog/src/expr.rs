//! Tiny analytic expression language for coefficients and Hamiltonians.
//!
//! Grammar: `+ - * /`, unary minus, parentheses, the functions
//! `abs sin cos exp` (one argument) and `min max` (two arguments),
//! numeric literals, the constant `pi`, and the variables
//! `x1 x2 y1 y2 p1 p2 r1 .. rM`.  The bare names `x y p r` alias the
//! first slot of each group, so 1-D coefficients read naturally,
//! e.g. `2+cos(2*pi*y)`.

use crate::error::{Error, Result};

/// A variable slot. Indices are 0-based; `R(0)` is `r1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X(usize),
    Y(usize),
    R(usize),
    P(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Abs,
    Sin,
    Cos,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

/// Evaluation context. Slices may be shorter than the variable index
/// range only if the expression was validated against their lengths;
/// out-of-range reads evaluate to NaN so misuse surfaces downstream.
#[derive(Clone, Copy, Debug)]
pub struct EvalArgs<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub r: &'a [f64],
    pub p: &'a [f64],
}

impl<'a> EvalArgs<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], r: &'a [f64], p: &'a [f64]) -> Self {
        EvalArgs { x, y, r, p }
    }
}

/// Highest 1-based index used per variable group; 0 means unused.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VarUse {
    pub x: usize,
    pub y: usize,
    pub r: usize,
    pub p: usize,
}

impl VarUse {
    pub fn merge(self, other: VarUse) -> VarUse {
        VarUse {
            x: self.x.max(other.x),
            y: self.y.max(other.y),
            r: self.r.max(other.r),
            p: self.p.max(other.p),
        }
    }

    pub fn is_constant(&self) -> bool {
        *self == VarUse::default()
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        Parser::new(src).parse_all()
    }

    pub fn eval(&self, a: &EvalArgs) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(v) => {
                let (slice, k) = match v {
                    Var::X(k) => (a.x, *k),
                    Var::Y(k) => (a.y, *k),
                    Var::R(k) => (a.r, *k),
                    Var::P(k) => (a.p, *k),
                };
                slice.get(k).copied().unwrap_or(f64::NAN)
            }
            Expr::Unary(op, e) => {
                let v = e.eval(a);
                match op {
                    UnOp::Neg => -v,
                    UnOp::Abs => v.abs(),
                    UnOp::Sin => v.sin(),
                    UnOp::Cos => v.cos(),
                    UnOp::Exp => v.exp(),
                }
            }
            Expr::Binary(op, l, r) => {
                let lv = l.eval(a);
                let rv = r.eval(a);
                match op {
                    BinOp::Add => lv + rv,
                    BinOp::Sub => lv - rv,
                    BinOp::Mul => lv * rv,
                    BinOp::Div => lv / rv,
                    BinOp::Min => lv.min(rv),
                    BinOp::Max => lv.max(rv),
                }
            }
        }
    }

    pub fn var_use(&self) -> VarUse {
        match self {
            Expr::Const(_) => VarUse::default(),
            Expr::Var(v) => {
                let mut u = VarUse::default();
                match v {
                    Var::X(k) => u.x = k + 1,
                    Var::Y(k) => u.y = k + 1,
                    Var::R(k) => u.r = k + 1,
                    Var::P(k) => u.p = k + 1,
                }
                u
            }
            Expr::Unary(_, e) => e.var_use(),
            Expr::Binary(_, l, r) => l.var_use().merge(r.var_use()),
        }
    }
}

/// True when the expression is structurally `abs(p1)`, the 1-D
/// Euclidean norm; lets configs written that way use the norm fast path.
pub fn expr_norm_1d(e: &Expr) -> bool {
    matches!(e, Expr::Unary(UnOp::Abs, inner) if **inner == Expr::Var(Var::P(0)))
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::ExprParse {
            src: self.src.to_string(),
            at: self.pos,
            msg: msg.into(),
        }
    }

    fn parse_all(mut self) -> Result<Expr> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            return Err(self.err("trailing input"));
        }
        Ok(e)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Binary(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.factor()?;
                    lhs = Expr::Binary(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                let inner = self.factor()?;
                Ok(Expr::Unary(UnOp::Neg, Box::new(inner)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.factor()
            }
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.err(format!("unexpected character `{}`", c as char))),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected `{}`", c as char)))
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                // exponent, optionally signed
                self.pos += 1;
                if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        let v: f64 = text.parse().map_err(|_| {
            self.pos = start;
            self.err(format!("bad number `{text}`"))
        })?;
        Ok(Expr::Const(v))
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        match name {
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "abs" => return self.call1(UnOp::Abs),
            "sin" => return self.call1(UnOp::Sin),
            "cos" => return self.call1(UnOp::Cos),
            "exp" => return self.call1(UnOp::Exp),
            "min" => return self.call2(BinOp::Min),
            "max" => return self.call2(BinOp::Max),
            _ => {}
        }
        if let Some(v) = parse_var(name) {
            return Ok(Expr::Var(v));
        }
        self.pos = start;
        Err(self.err(format!("unknown name `{name}`")))
    }

    fn call1(&mut self, op: UnOp) -> Result<Expr> {
        self.expect(b'(')?;
        let a = self.expr()?;
        self.expect(b')')?;
        Ok(Expr::Unary(op, Box::new(a)))
    }

    fn call2(&mut self, op: BinOp) -> Result<Expr> {
        self.expect(b'(')?;
        let a = self.expr()?;
        self.expect(b',')?;
        let b = self.expr()?;
        self.expect(b')')?;
        Ok(Expr::Binary(op, Box::new(a), Box::new(b)))
    }
}

fn parse_var(name: &str) -> Option<Var> {
    let (head, tail) = name.split_at(1);
    let idx = if tail.is_empty() {
        0
    } else {
        let k: usize = tail.parse().ok()?;
        if k == 0 {
            return None;
        }
        k - 1
    };
    match head {
        "x" => Some(Var::X(idx)),
        "y" => Some(Var::Y(idx)),
        "r" => Some(Var::R(idx)),
        "p" => Some(Var::P(idx)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: &[f64], y: &[f64], r: &[f64], p: &[f64]) -> f64 {
        Expr::parse(src).unwrap().eval(&EvalArgs::new(x, y, r, p))
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1+2*3", &[], &[], &[], &[]), 7.0);
        assert_eq!(ev("(1+2)*3", &[], &[], &[], &[]), 9.0);
        assert_eq!(ev("2-3-4", &[], &[], &[], &[]), -5.0);
        assert_eq!(ev("12/4/3", &[], &[], &[], &[]), 1.0);
        assert_eq!(ev("-2*-3", &[], &[], &[], &[]), 6.0);
        assert_eq!(ev("1.5e2", &[], &[], &[], &[]), 150.0);
    }

    #[test]
    fn functions_and_constants() {
        assert!((ev("cos(2*pi)", &[], &[], &[], &[]) - 1.0).abs() < 1e-15);
        assert_eq!(ev("abs(-3)", &[], &[], &[], &[]), 3.0);
        assert_eq!(ev("min(2,max(1,5))", &[], &[], &[], &[]), 2.0);
        assert!((ev("exp(0)", &[], &[], &[], &[]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn variables_and_aliases() {
        let x = [0.25, 0.5];
        let y = [0.125];
        let r = [2.0, -1.0];
        let p = [3.0];
        assert_eq!(ev("x1", &x, &y, &r, &p), 0.25);
        assert_eq!(ev("x", &x, &y, &r, &p), 0.25);
        assert_eq!(ev("x2", &x, &y, &r, &p), 0.5);
        assert_eq!(ev("y", &x, &y, &r, &p), 0.125);
        assert_eq!(ev("r2", &x, &y, &r, &p), -1.0);
        assert_eq!(ev("p", &x, &y, &r, &p), 3.0);
        assert_eq!(ev("r1+2*r2", &x, &y, &r, &p), 0.0);
    }

    #[test]
    fn example_coefficient_form() {
        // the documented coefficient syntax must parse and hit its max at y=0
        let e = Expr::parse("2+cos(2*pi*y)").unwrap();
        let at = |yv: f64| e.eval(&EvalArgs::new(&[], &[yv], &[], &[]));
        assert!((at(0.0) - 3.0).abs() < 1e-15);
        assert!((at(0.5) - 1.0).abs() < 1e-15);
        assert_eq!(e.var_use(), VarUse { x: 0, y: 1, r: 0, p: 0 });
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("1+").is_err());
        assert!(Expr::parse("foo(2)").is_err());
        assert!(Expr::parse("min(1)").is_err());
        assert!(Expr::parse("2 3").is_err());
        assert!(Expr::parse("r0").is_err());
        assert!(Expr::parse("x3+1").is_ok()); // index range checked at bind time, not parse time
    }

    #[test]
    fn out_of_range_variable_is_nan() {
        let v = ev("r3", &[], &[], &[1.0, 2.0], &[]);
        assert!(v.is_nan());
    }
}

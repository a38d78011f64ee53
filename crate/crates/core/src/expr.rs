//! Closed-form coefficient expressions.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'x' | 'y' | 't' | 'pi'
//!         | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | abs | sqrt
//! ```
//!
//! Derivatives are symbolic except for powers with a non-constant exponent,
//! which have no closed-form rule in this grammar; [`Expr::derivative`] returns
//! `None` for those and callers fall back to central differences.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Abs,
    Sqrt,
    /// Internal only; produced by differentiating `abs`.
    Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            chars: src.char_indices().collect(),
            pos: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Var(Var::T) => t,
            Expr::Neg(a) => -a.eval(x, y, t),
            Expr::Add(a, b) => a.eval(x, y, t) + b.eval(x, y, t),
            Expr::Sub(a, b) => a.eval(x, y, t) - b.eval(x, y, t),
            Expr::Mul(a, b) => a.eval(x, y, t) * b.eval(x, y, t),
            Expr::Div(a, b) => a.eval(x, y, t) / b.eval(x, y, t),
            Expr::Pow(a, b) => {
                let base = a.eval(x, y, t);
                match **b {
                    Expr::Num(e) if e == e.trunc() && e.abs() < 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(x, y, t)),
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, y, t);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Abs => v.abs(),
                    Func::Sqrt => v.sqrt(),
                    Func::Sign => {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.is_constant() && b.is_constant()
            }
        }
    }

    /// True if the expression does not mention `v`.
    pub fn independent_of(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::Var(w) => *w != v,
            Expr::Neg(a) | Expr::Call(_, a) => a.independent_of(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.independent_of(v) && b.independent_of(v)
            }
        }
    }

    /// Symbolic partial derivative, `None` when no rule applies.
    pub fn derivative(&self, v: Var) -> Option<Expr> {
        if self.independent_of(v) {
            return Some(Expr::Num(0.0));
        }
        let d = match self {
            Expr::Num(_) => num(0.0),
            Expr::Var(w) => num(if *w == v { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.derivative(v)?),
            Expr::Add(a, b) => add(a.derivative(v)?, b.derivative(v)?),
            Expr::Sub(a, b) => sub(a.derivative(v)?, b.derivative(v)?),
            Expr::Mul(a, b) => add(
                mul(a.derivative(v)?, (**b).clone()),
                mul((**a).clone(), b.derivative(v)?),
            ),
            Expr::Div(a, b) => div(
                sub(
                    mul(a.derivative(v)?, (**b).clone()),
                    mul((**a).clone(), b.derivative(v)?),
                ),
                mul((**b).clone(), (**b).clone()),
            ),
            Expr::Pow(a, b) => {
                if !b.independent_of(v) {
                    return None;
                }
                // d(f^c) = c f^(c-1) f'
                let lowered = match **b {
                    Expr::Num(c) => num(c - 1.0),
                    _ => sub((**b).clone(), num(1.0)),
                };
                mul(
                    mul((**b).clone(), pow((**a).clone(), lowered)),
                    a.derivative(v)?,
                )
            }
            Expr::Call(f, a) => {
                let inner = a.derivative(v)?;
                let outer = match f {
                    Func::Sin => call(Func::Cos, (**a).clone()),
                    Func::Cos => neg(call(Func::Sin, (**a).clone())),
                    Func::Exp => call(Func::Exp, (**a).clone()),
                    Func::Abs => call(Func::Sign, (**a).clone()),
                    Func::Sqrt => div(num(0.5), call(Func::Sqrt, (**a).clone())),
                    Func::Sign => num(0.0),
                };
                mul(outer, inner)
            }
        };
        Some(d)
    }
}

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 0.0 => b,
        (_, Expr::Num(y)) if *y == 0.0 => a,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Num(y)) if *y == 0.0 => a,
        (Expr::Num(x), _) if *x == 0.0 => neg(b),
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) | (_, Expr::Num(x)) if *x == 0.0 => Expr::Num(0.0),
        (Expr::Num(x), _) if *x == 1.0 => b,
        (_, Expr::Num(y)) if *y == 1.0 => a,
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), _) if *x == 0.0 => Expr::Num(0.0),
        (_, Expr::Num(y)) if *y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match &b {
        Expr::Num(y) if *y == 1.0 => a,
        Expr::Num(y) if *y == 0.0 => Expr::Num(1.0),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Var(Var::Y) => write!(f, "y"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Abs => "abs",
                    Func::Sqrt => "sqrt",
                    Func::Sign => "sign",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

struct Parser {
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl Parser {
    fn err(&self, msg: &str) -> Error {
        let column = self
            .chars
            .get(self.pos)
            .map(|(i, _)| i + 1)
            .unwrap_or_else(|| self.chars.last().map(|(i, _)| i + 2).unwrap_or(1));
        Error::Expr {
            column,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].1.is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).map(|c| c.1)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some('+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some('*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some('/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.chars.len()
                    && (self.chars[self.pos].1.is_ascii_alphanumeric() || self.chars[self.pos].1 == '_')
                {
                    self.pos += 1;
                }
                let ident: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
                let func = match ident.as_str() {
                    "x" => return Ok(Expr::Var(Var::X)),
                    "y" => return Ok(Expr::Var(Var::Y)),
                    "t" => return Ok(Expr::Var(Var::T)),
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "abs" => Func::Abs,
                    "sqrt" => Func::Sqrt,
                    _ => {
                        self.pos = start;
                        return Err(self.err(&format!("unknown identifier '{ident}'")));
                    }
                };
                self.expect('(')?;
                let arg = self.expr()?;
                self.expect(')')?;
                Ok(Expr::Call(func, Box::new(arg)))
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of expression")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let mut seen_exp = false;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos].1;
            let sign_after_exp = (c == '+' || c == '-')
                && seen_exp
                && matches!(self.chars[self.pos - 1].1, 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || sign_after_exp {
                self.pos += 1;
            } else if (c == 'e' || c == 'E') && !seen_exp {
                seen_exp = true;
                self.pos += 1;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().map(|c| c.1).collect();
        text.parse::<f64>().map(Expr::Num).map_err(|_| {
            self.pos = start;
            self.err(&format!("malformed number '{text}'"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, x: f64, y: f64, t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, y, t)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0, 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0, 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0, 0.0), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0, 0.0, 0.0), -4.0);
        assert!((ev("sin(pi*x)*sin(pi*y)*exp(-t)", 0.5, 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(ev("1.5e-1 * 2", 0.0, 0.0, 0.0), 0.3);
        assert_eq!(ev("abs(x - y) + sqrt(4)", 1.0, 3.0, 0.0), 4.0);
    }

    #[test]
    fn errors_carry_columns() {
        match Expr::parse("1 + foo(x)") {
            Err(Error::Expr { column, msg }) => {
                assert_eq!(column, 5);
                assert!(msg.contains("foo"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("2 3").is_err());
    }

    #[test]
    fn symbolic_derivatives_match_differences() {
        let cases = [
            "sin(pi*x)*sin(pi*y)*exp(-t)",
            "x^3*y - 2*x/(1 + y^2)",
            "sqrt(1 + x^2 + y^2) * cos(t*x)",
            "abs(x - 0.3) * y",
            "-(x*y)^2",
        ];
        let h = 1e-6;
        for src in cases {
            let e = Expr::parse(src).unwrap();
            for v in [Var::X, Var::Y, Var::T] {
                let d = e.derivative(v).unwrap();
                let (x, y, t) = (0.61, 0.27, 0.4);
                let (dx, dy, dt) = match v {
                    Var::X => (h, 0.0, 0.0),
                    Var::Y => (0.0, h, 0.0),
                    Var::T => (0.0, 0.0, h),
                };
                let fd = (e.eval(x + dx, y + dy, t + dt) - e.eval(x - dx, y - dy, t - dt)) / (2.0 * h);
                assert!((d.eval(x, y, t) - fd).abs() < 1e-7, "{src} d{v:?}: {} vs {fd}", d.eval(x, y, t));
            }
        }
    }

    #[test]
    fn variable_exponent_has_no_rule() {
        let e = Expr::parse("x^y").unwrap();
        assert!(e.derivative(Var::Y).is_none());
        let dx = e.derivative(Var::X).unwrap();
        assert!((dx.eval(2.0, 3.0, 0.0) - 12.0).abs() < 1e-12);
        assert!(e.derivative(Var::T).is_some());
        assert_eq!(Expr::parse("2^x").unwrap().eval(3.0, 0.0, 0.0), 8.0);
        assert!((ev("pi", 0.0, 0.0, 0.0) - PI).abs() == 0.0);
    }
}

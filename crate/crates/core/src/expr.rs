//! Arithmetic expressions for user-defined coefficient fields and integrands.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?                 right associative
//! atom    := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ident   := x | x1 .. xN | t | kappa | pi
//! funcs   := pow(a,b) exp(a) log(a) sqrt(a) abs(a) sign(a) step(a)
//!            min(a,b) max(a,b) indicator(r)
//! ```
//!
//! `x` is an alias for `x1`. `step(a)` is the Heaviside function with
//! `step(0) = 1`. `indicator(r)` is `1` when the Euclidean norm of the state
//! is at most `r` and `0` otherwise. `kappa` is only meaningful inside
//! majorant expressions and evaluates to 0 elsewhere.

use crate::error::{FlowError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Pow,
    Exp,
    Log,
    Sqrt,
    Abs,
    Sign,
    Step,
    Min,
    Max,
    Indicator,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "pow" => (Func::Pow, 2),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "sign" => (Func::Sign, 1),
            "step" => (Func::Step, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "indicator" => (Func::Indicator, 1),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state coordinate.
    Var(usize),
    Time,
    Kappa,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src: src.as_bytes(), pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        self.eval_with(t, x, 0.0)
    }

    pub fn eval_with(&self, t: f64, x: &[f64], kappa: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x.get(*i).copied().unwrap_or(0.0),
            Expr::Time => t,
            Expr::Kappa => kappa,
            Expr::Neg(a) => -a.eval_with(t, x, kappa),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval_with(t, x, kappa), b.eval_with(t, x, kappa));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval_with(t, x, kappa);
                match f {
                    Func::Pow => a.powf(args[1].eval_with(t, x, kappa)),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Sqrt => a.sqrt(),
                    Func::Abs => a.abs(),
                    Func::Sign => sign(a),
                    Func::Step => {
                        if a >= 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Min => a.min(args[1].eval_with(t, x, kappa)),
                    Func::Max => a.max(args[1].eval_with(t, x, kappa)),
                    Func::Indicator => {
                        let r2: f64 = x.iter().map(|v| v * v).sum();
                        if r2.sqrt() <= a {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
    }

    /// Number of state coordinates referenced (largest index + 1).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Neg(a) => a.arity(),
            Expr::Bin(_, a, b) => a.arity().max(b.arity()),
            Expr::Call(_, args) => args.iter().map(Expr::arity).max().unwrap_or(0),
            _ => 0,
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> FlowError {
        FlowError::Expr { column: self.pos + 1, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let exp_sign = (c == b'+' || c == b'-')
                && self.pos > start
                && matches!(self.src[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Expr::Const).map_err(|_| FlowError::Expr {
            column: start + 1,
            message: format!("invalid number '{text}'"),
        })
    }

    fn ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        if self.peek() == Some(b'(') {
            let Some((func, arity)) = Func::lookup(name) else {
                return Err(FlowError::Expr {
                    column: start + 1,
                    message: format!("unknown function '{name}'"),
                });
            };
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected ')' after arguments"));
            }
            if args.len() != arity {
                return Err(FlowError::Expr {
                    column: start + 1,
                    message: format!("'{name}' takes {arity} argument(s), got {}", args.len()),
                });
            }
            return Ok(Expr::Call(func, args));
        }
        match name {
            "x" => Ok(Expr::Var(0)),
            "t" => Ok(Expr::Time),
            "kappa" => Ok(Expr::Kappa),
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            _ => {
                if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if idx >= 1 {
                        return Ok(Expr::Var(idx - 1));
                    }
                }
                Err(FlowError::Expr {
                    column: start + 1,
                    message: format!("unknown identifier '{name}'"),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(src: &str, x: &[f64]) -> f64 {
        Expr::parse(src).unwrap().eval(0.5, x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[]), 7.0);
        assert_eq!(ev("-x^2", &[3.0]), -9.0);
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("(1 - 2) - 3", &[]), -4.0);
        assert_eq!(ev("8 / 2 / 2", &[]), 2.0);
        assert_eq!(ev("t * 4", &[]), 2.0);
        assert_eq!(ev("1e-3 * 1000", &[]), 1.0);
    }

    #[test]
    fn example_drift_expression() {
        let src = "(1 - x^5) * (1 - step(x)) - (1 + x^5) * step(x)";
        assert_eq!(ev(src, &[2.0]), -33.0);
        assert_eq!(ev(src, &[-1.0]), 2.0);
        assert_eq!(ev(src, &[0.0]), -1.0);
    }

    #[test]
    fn functions_and_indicator() {
        assert_eq!(ev("indicator(1)", &[0.6, 0.8]), 1.0);
        assert_eq!(ev("indicator(1)", &[0.6, 0.81]), 0.0);
        assert_eq!(ev("sign(x2)", &[0.0, -3.0]), -1.0);
        assert_eq!(ev("pow(x1, 2) + abs(-1) + max(1, 2)", &[3.0]), 12.0);
        assert!((ev("exp(log(2))", &[]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors_report_columns() {
        match Expr::parse("1 + foo(2)") {
            Err(FlowError::Expr { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("pow(1)").is_err());
        assert!(Expr::parse("x0").is_err());
        assert!(Expr::parse("(1").is_err());
    }

    #[test]
    fn arity_counts_coordinates() {
        assert_eq!(Expr::parse("x3 + x").unwrap().arity(), 3);
        assert_eq!(Expr::parse("t").unwrap().arity(), 0);
    }

    proptest! {
        #[test]
        fn polynomial_matches_direct_evaluation(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -3.0f64..3.0) {
            let src = format!("({a}) * x^2 + ({b}) * x - 1");
            let got = ev(&src, &[x]);
            let want = a * x * x + b * x - 1.0;
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

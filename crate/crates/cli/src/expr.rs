//! Closed-form expressions in `x` and `t` for coefficients and data.
//!
//! Grammar, lowest precedence first:
//!
//! ```text
//! sum     = product (('+' | '-') product)*
//! product = unary (('*' | '/') unary)*
//! unary   = '-' unary | power
//! power   = atom ('^' unary)?            right associative
//! atom    = number | 'pi' | 'e' | 'x' | 't' | func '(' sum ')' | '(' sum ')'
//! func    = sin | cos | exp | sqrt
//! ```

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at column {}: {}", self.pos + 1, self.msg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    uses_x: bool,
    uses_t: bool,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
            uses_x: false,
            uses_t: false,
        };
        let root = p.sum()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error(format!("unexpected '{}'", p.src[p.pos] as char)));
        }
        Ok(Self {
            root,
            uses_x: p.uses_x,
            uses_t: p.uses_t,
        })
    }

    pub fn uses(&self, v: Var) -> bool {
        match v {
            Var::X => self.uses_x,
            Var::T => self.uses_t,
        }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        eval(&self.root, x, t)
    }
}

fn eval(n: &Node, x: f64, t: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(Var::X) => x,
        Node::Var(Var::T) => t,
        Node::Neg(a) => -eval(a, x, t),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x, t), eval(b, x, t));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, a) => {
            let a = eval(a, x, t);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Sqrt => a.sqrt(),
            }
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    uses_x: bool,
    uses_t: bool,
}

impl Parser<'_> {
    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(c as char, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.src.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                let func = match name {
                    "x" => {
                        self.uses_x = true;
                        return Ok(Node::Var(Var::X));
                    }
                    "t" => {
                        self.uses_t = true;
                        return Ok(Node::Var(Var::T));
                    }
                    "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                    "e" => return Ok(Node::Num(std::f64::consts::E)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "sqrt" => Func::Sqrt,
                    _ => {
                        self.pos = start;
                        return Err(self.error(format!("unknown name '{name}'")));
                    }
                };
                self.expect(b'(')?;
                let arg = self.sum()?;
                self.expect(b')')?;
                Ok(Node::Call(func, Box::new(arg)))
            }
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.src.get(p.pos).is_some_and(u8::is_ascii_digit) {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        // exponent only when digits follow, so `2e` stays an error
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Node::Num).map_err(|_| ParseError {
            pos: start,
            msg: format!("bad number '{text}'"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, x: f64, t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, t)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0, 0.0), 9.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(ev("2 ^ -1", 0.0, 0.0), 0.5);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(ev("1 - 2 - 3", 0.0, 0.0), -4.0);
    }

    #[test]
    fn variables_functions_and_constants() {
        let v = ev("exp(-t) * x^2 * (1 - x)^2", 0.5, 1.0);
        assert!((v - (-1.0f64).exp() / 16.0).abs() < 1e-15);
        assert!((ev("sin(pi*x)", 0.5, 0.0) - 1.0).abs() < 1e-15);
        assert!((ev("sqrt(1 + x) + cos(0) + e", 3.0, 0.0) - (3.0 + std::f64::consts::E)).abs() < 1e-15);
        assert_eq!(ev("1.5e-3", 0.0, 0.0), 1.5e-3);
        assert_eq!(ev("2E2", 0.0, 0.0), 200.0);
    }

    #[test]
    fn variable_usage_is_tracked() {
        let e = Expr::parse("x + 1").unwrap();
        assert!(e.uses(Var::X) && !e.uses(Var::T));
        assert!(Expr::parse("exp(t)").unwrap().uses(Var::T));
    }

    #[test]
    fn errors_point_at_the_offending_column() {
        let e = Expr::parse("1 + y").unwrap_err();
        assert_eq!(e.pos, 4);
        assert!(e.msg.contains("'y'"));
        assert!(Expr::parse("sin x").is_err());
        assert!(Expr::parse("(1 + 2").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("2e").is_err());
        assert!(Expr::parse("log(x)").is_err());
    }

    proptest! {
        #[test]
        fn polynomials_match_horner(c in proptest::collection::vec(-5.0f64..5.0, 1..5), x in -2.0f64..2.0) {
            let src = c
                .iter()
                .enumerate()
                .map(|(k, a)| format!("({a:e}) * x^{k}"))
                .collect::<Vec<_>>()
                .join(" + ");
            let want = c.iter().rev().fold(0.0, |acc, a| acc * x + a);
            let got = ev(&src, x, 0.0);
            prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }
}

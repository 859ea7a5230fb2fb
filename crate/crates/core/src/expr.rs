//! Arithmetic expressions in `t, x1..xd` for configuration data.
//!
//! Grammar: `+ - * / ^` (also `×`, `÷`, `−`), parentheses, numbers, the
//! constants `pi` and `e`, and the functions `exp log sqrt sin cos tanh abs`
//! (one argument) and `max min` (two or more).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::operator::ScalarField;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    T,
    X(usize),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Sin,
    Cos,
    Tanh,
    Abs,
    Max,
    Min,
}

/// A parsed expression, cheap to clone and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Arc<Node>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn lex(s: &str) -> Result<Vec<(usize, Tok)>> {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            ' ' | '\t' | '\n' => i += 1,
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_ascii_digit() || chars[i].1 == '.') {
                    i += 1;
                }
                // exponent
                if i < chars.len() && (chars[i].1 == 'e' || chars[i].1 == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j].1 == '+' || chars[j].1 == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].1.is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].1.is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().map(|c| c.1).collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::Expression(format!("bad number '{text}' at {pos}")))?;
                out.push((pos, Tok::Num(v)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                    i += 1;
                }
                out.push((pos, Tok::Ident(chars[start..i].iter().map(|c| c.1).collect())));
            }
            '+' | '-' | '*' | '/' | '^' => {
                out.push((pos, Tok::Op(c)));
                i += 1;
            }
            '−' => {
                out.push((pos, Tok::Op('-')));
                i += 1;
            }
            '×' => {
                out.push((pos, Tok::Op('*')));
                i += 1;
            }
            '÷' => {
                out.push((pos, Tok::Op('/')));
                i += 1;
            }
            '(' => {
                out.push((pos, Tok::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Tok::RParen));
                i += 1;
            }
            ',' => {
                out.push((pos, Tok::Comma));
                i += 1;
            }
            _ => return Err(Error::Expression(format!("unexpected '{c}' at {pos}"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    i: usize,
    dim: usize,
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.1)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map(|t| t.0).unwrap_or(self.len)
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Expression(format!("{msg} at {}", self.pos())))
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.i += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.i += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.i += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.i += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    // right-associative; binds tighter than unary minus: -x^2 = -(x^2)
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.i += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.i += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::LParen) => {
                self.i += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.i += 1;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.i += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let f = match name.as_str() {
                        "exp" => Func::Exp,
                        "log" | "ln" => Func::Log,
                        "sqrt" => Func::Sqrt,
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "tanh" => Func::Tanh,
                        "abs" => Func::Abs,
                        "max" => Func::Max,
                        "min" => Func::Min,
                        _ => {
                            self.i -= 1;
                            return self.err(&format!("unknown function '{name}'"));
                        }
                    };
                    self.i += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.i += 1;
                        args.push(self.expr()?);
                    }
                    if self.peek() != Some(&Tok::RParen) {
                        return self.err("expected ')' after arguments");
                    }
                    self.i += 1;
                    let ok = match f {
                        Func::Max | Func::Min => args.len() >= 2,
                        _ => args.len() == 1,
                    };
                    if !ok {
                        return self.err(&format!("wrong number of arguments to '{name}'"));
                    }
                    return Ok(Node::Call(f, args));
                }
                match name.as_str() {
                    "t" => Ok(Node::T),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    n if n.starts_with('x') => {
                        let k: usize = n[1..]
                            .parse()
                            .map_err(|_| Error::Expression(format!("unknown variable '{n}'")))?;
                        if k == 0 || k > self.dim {
                            return Err(Error::Expression(format!(
                                "'{n}' out of range for dimension {}",
                                self.dim
                            )));
                        }
                        Ok(Node::X(k - 1))
                    }
                    n => Err(Error::Expression(format!("unknown variable '{n}'"))),
                }
            }
            _ => self.err("expected a value"),
        }
    }
}

fn eval(n: &Node, t: f64, x: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::T => t,
        Node::X(k) => x[*k],
        Node::Neg(a) => -eval(a, t, x),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, t, x), eval(b, t, x));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], t, x);
            match f {
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tanh => a.tanh(),
                Func::Abs => a.abs(),
                Func::Max => args[1..].iter().map(|e| eval(e, t, x)).fold(a, f64::max),
                Func::Min => args[1..].iter().map(|e| eval(e, t, x)).fold(a, f64::min),
            }
        }
    }
}

impl Expr {
    /// Parses `source` for a spatial dimension `dim`.
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let toks = lex(source)?;
        let mut p = Parser {
            toks: &toks,
            i: 0,
            dim,
            len: source.len(),
        };
        let root = p.expr()?;
        if p.i != toks.len() {
            return p.err("unexpected trailing input");
        }
        Ok(Self {
            source: source.to_string(),
            root: Arc::new(root),
            dim,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        eval(&self.root, t, x)
    }

    pub fn into_field(self) -> ScalarField {
        Arc::new(move |t, x| self.eval(t, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("1 + 2*x1^2 - max(t, x2) / 2", 2).unwrap();
        assert_eq!(e.eval(3.0, &[2.0, 1.0]), 1.0 + 8.0 - 1.5);
        assert_eq!(Expr::parse("-x1^2", 1).unwrap().eval(0.0, &[3.0]), -9.0);
        assert_eq!(Expr::parse("2^3^2", 1).unwrap().eval(0.0, &[0.0]), 512.0);
        assert_eq!(Expr::parse("2 × 3 ÷ 4 − 1", 1).unwrap().eval(0.0, &[0.0]), 0.5);
        assert_eq!(Expr::parse("min(3, 1, 2)", 1).unwrap().eval(0.0, &[0.0]), 1.0);
        assert_eq!(Expr::parse("1.5e-1", 1).unwrap().eval(0.0, &[0.0]), 0.15);
        assert!((Expr::parse("exp(log(2))", 1).unwrap().eval(0.0, &[0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn errors_report_position() {
        let e = Expr::parse("1 + (x1", 1).unwrap_err().to_string();
        assert!(e.contains("expected ')'"), "{e}");
        assert!(Expr::parse("x3", 2).is_err());
        assert!(Expr::parse("foo(1)", 1).is_err());
        assert!(Expr::parse("max(1)", 1).is_err());
        assert!(Expr::parse("1 2", 1).is_err());
        assert!(Expr::parse("1 $ 2", 1).is_err());
    }

    proptest! {
        #[test]
        fn linear_forms_evaluate_exactly(a in -10i32..10, b in -10i32..10, x in -5i32..5) {
            let e = Expr::parse(&format!("{a} + ({b})*x1"), 1).unwrap();
            prop_assert_eq!(e.eval(0.0, &[x as f64]), (a + b * x) as f64);
        }
    }
}

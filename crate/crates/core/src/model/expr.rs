//! Arithmetic expressions over the age `x` and the trait `y`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//! func  := 'exp' | 'log' | 'abs'
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-y^2`
//! is `-(y^2)` and `2^-1` is `0.5`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

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
    Exp,
    Log,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
        }
    }

    fn lookup(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Neg(e) => -e.eval(x, y),
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.eval(x, y), r.eval(x, y));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Expr::Call(f, e) => {
                let v = e.eval(x, y);
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Abs => v.abs(),
                }
            }
        }
    }

    fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses(var),
            Expr::Bin(_, l, r) => l.uses(var) || r.uses(var),
        }
    }
}

/// Integer exponents go through `powi` so `y^3` is a plain product.
fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 => write!(f, "(-{:?})", -v),
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::Y) => f.write_str("y"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                    BinOp::Pow => '^',
                };
                write!(f, "({l}{sym}{r})")
            }
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
        }
    }
}

/// A parsed coefficient expression together with its source text.
#[derive(Debug, Clone)]
pub struct CoefficientExpr {
    source: String,
    root: Expr,
}

impl CoefficientExpr {
    pub fn parse(text: &str) -> Result<Self> {
        let root = Parser::new(text).parse()?;
        Ok(Self {
            source: text.to_string(),
            root,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            source: format!("{value:?}"),
            root: Expr::Num(value),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.root.eval(x, y)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn tree(&self) -> &Expr {
        &self.root
    }

    pub fn depends_on_x(&self) -> bool {
        self.root.uses(Var::X)
    }

    pub fn depends_on_y(&self) -> bool {
        self.root.uses(Var::Y)
    }
}

impl PartialEq for CoefficientExpr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

impl FromStr for CoefficientExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for CoefficientExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for CoefficientExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        CoefficientExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
    peeked: Option<(Token, usize)>,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            pos: 0,
            peeked: None,
        }
    }

    fn parse(mut self) -> Result<Expr> {
        let e = self.expr()?;
        match self.next()? {
            (Token::End, _) => Ok(e),
            (tok, at) => Err(syntax(at, format!("unexpected {}", describe(&tok)))),
        }
    }

    fn lex(&mut self) -> Result<(Token, usize)> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Token::End, start));
        };
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
            let lit = &self.text[start..end];
            let value: f64 = lit
                .parse()
                .map_err(|_| syntax(start, format!("malformed number `{lit}`")))?;
            self.pos = end;
            return Ok((Token::Num(value), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Token::Ident(self.text[start..end].to_string()), start));
        }
        let ch = self.text[start..].chars().next().unwrap_or('\0');
        if "+-*/^()".contains(ch) {
            self.pos += ch.len_utf8();
            Ok((Token::Sym(ch), start))
        } else {
            Err(syntax(start, format!("unexpected character `{ch}`")))
        }
    }

    fn peek(&mut self) -> Result<&(Token, usize)> {
        if self.peeked.is_none() {
            let t = self.lex()?;
            self.peeked = Some(t);
        }
        Ok(self.peeked.as_ref().expect("peeked token"))
    }

    fn next(&mut self) -> Result<(Token, usize)> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn eat(&mut self, sym: char) -> Result<bool> {
        if self.peek()?.0 == Token::Sym(sym) {
            self.next()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+')? {
                BinOp::Add
            } else if self.eat('-')? {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*')? {
                BinOp::Mul
            } else if self.eat('/')? {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-')? {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else if self.eat('+')? {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^')? {
            let exponent = self.unary()?;
            Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, at) = self.next()?;
        match tok {
            Token::Num(v) => Ok(Expr::Num(v)),
            Token::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::Var(Var::X)),
                "y" => Ok(Expr::Var(Var::Y)),
                _ => match Func::lookup(&name) {
                    Some(func) => {
                        let (open, pos) = self.next()?;
                        if open != Token::Sym('(') {
                            return Err(syntax(pos, format!("expected `(` after `{name}`")));
                        }
                        let arg = self.expr()?;
                        let (close, pos) = self.next()?;
                        if close != Token::Sym(')') {
                            return Err(syntax(pos, format!("expected `)`, found {}", describe(&close))));
                        }
                        Ok(Expr::Call(func, Box::new(arg)))
                    }
                    None => Err(Error::UnknownIdentifier { name, offset: at }),
                },
            },
            Token::Sym('(') => {
                let inner = self.expr()?;
                let (close, pos) = self.next()?;
                if close != Token::Sym(')') {
                    return Err(syntax(pos, format!("expected `)`, found {}", describe(&close))));
                }
                Ok(inner)
            }
            other => Err(syntax(at, format!("expected operand, found {}", describe(&other)))),
        }
    }
}

fn describe(tok: &Token) -> String {
    match tok {
        Token::Num(v) => format!("number {v}"),
        Token::Ident(s) => format!("identifier `{s}`"),
        Token::Sym(c) => format!("`{c}`"),
        Token::End => "end of input".to_string(),
    }
}

fn syntax(offset: usize, message: String) -> Error {
    Error::Syntax { offset, message }
}

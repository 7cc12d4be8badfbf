//! Arithmetic expressions over state variables `x1..xn` and time `t`.
//!
//! Grammar (whitespace-insensitive):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') power)*
//! unary := '-' unary | power
//! power := atom ('^' unsigned-integer)?
//! atom  := number | 'x' index | 't' | '(' expr ')' | func '(' expr ')'
//! func  := sin | cos | tan | exp | log | tanh | sqrt
//! ```
//!
//! A right operand of `*` or `/` cannot start with a minus sign: `2*-3` is
//! rejected, `2*(-3)` is accepted. There is no implicit multiplication.

use std::fmt;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
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
    Tanh,
    Sqrt,
}

impl Func {
    pub const ALL: [Func; 7] = [
        Func::Sin,
        Func::Cos,
        Func::Tan,
        Func::Exp,
        Func::Log,
        Func::Tanh,
        Func::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Parsed expression tree. Equality is structural and ignores source offsets.
#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    /// 1-based state index.
    State(usize),
    Time,
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Pow {
        base: Box<Expr>,
        exp: u32,
    },
    Call {
        func: Func,
        arg: Box<Expr>,
        offset: usize,
    },
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        use Expr::*;
        match (self, other) {
            (Num(a), Num(b)) => a.to_bits() == b.to_bits(),
            (State(a), State(b)) => a == b,
            (Time, Time) => true,
            (Neg(a), Neg(b)) => a == b,
            (
                Binary { op, lhs, rhs },
                Binary {
                    op: op2,
                    lhs: lhs2,
                    rhs: rhs2,
                },
            ) => op == op2 && lhs == lhs2 && rhs == rhs2,
            (Pow { base, exp }, Pow { base: b2, exp: e2 }) => exp == e2 && base == b2,
            (Call { func, arg, .. }, Call { func: f2, arg: a2, .. }) => func == f2 && arg == a2,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedToken(String),
    UnexpectedEnd,
    UnknownIdentifier(String),
    UnbalancedParen,
    BadIndex(String),
    BadNumber,
    BadExponent,
    StateNotAllowed,
    TrailingInput,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::UnexpectedToken(tok) => write!(f, "unexpected '{tok}'"),
            ParseErrorKind::UnexpectedEnd => write!(f, "unexpected end of input"),
            ParseErrorKind::UnknownIdentifier(id) => write!(f, "unknown identifier '{id}'"),
            ParseErrorKind::UnbalancedParen => write!(f, "unbalanced parenthesis"),
            ParseErrorKind::BadIndex(id) => write!(f, "bad state variable '{id}'"),
            ParseErrorKind::BadNumber => write!(f, "malformed number"),
            ParseErrorKind::BadExponent => {
                write!(f, "exponent must be a non-negative integer literal")
            }
            ParseErrorKind::StateNotAllowed => {
                write!(f, "state variables are not allowed here (only t)")
            }
            ParseErrorKind::TrailingInput => write!(f, "unexpected trailing input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind} (expected {})", .expected.join(" | "))]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
    pub expected: Vec<&'static str>,
}

const OPERAND: [&str; 4] = ["number", "variable", "'('", "function"];

/// Parses an expression that may reference state variables and time.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    Parser::new(text, true).parse()
}

/// Parses a time signal: only `t` is allowed as a variable.
pub fn parse_signal(text: &str) -> Result<Expr, ParseError> {
    Parser::new(text, false).parse()
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    allow_state: bool,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, allow_state: bool) -> Self {
        Self {
            src: text.as_bytes(),
            pos: 0,
            allow_state,
        }
    }

    fn parse(mut self) -> Result<Expr, ParseError> {
        let expr = self.expr()?;
        self.skip_ws();
        if let Some(c) = self.peek() {
            let kind = if c == b')' {
                ParseErrorKind::UnbalancedParen
            } else {
                ParseErrorKind::TrailingInput
            };
            return Err(self.error(kind, vec!["operator", "end of input"]));
        }
        Ok(expr)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn error(&self, kind: ParseErrorKind, expected: Vec<&'static str>) -> ParseError {
        ParseError {
            offset: self.pos,
            kind,
            expected,
        }
    }

    fn unexpected(&self, expected: Vec<&'static str>) -> ParseError {
        match self.peek() {
            None => self.error(ParseErrorKind::UnexpectedEnd, expected),
            Some(b')') => self.error(ParseErrorKind::UnbalancedParen, expected),
            Some(c) => self.error(
                ParseErrorKind::UnexpectedToken((c as char).to_string()),
                expected,
            ),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.power()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(ParseErrorKind::BadExponent, vec!["unsigned integer"]));
        }
        // "2^1.5" and "2^3e1" are not integer literals
        if matches!(self.peek(), Some(b'.' | b'e' | b'E')) {
            return Err(self.error(ParseErrorKind::BadExponent, vec!["unsigned integer"]));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let exp = digits.parse::<u32>().map_err(|_| ParseError {
            offset: start,
            kind: ParseErrorKind::BadExponent,
            expected: vec!["unsigned integer"],
        })?;
        Ok(Expr::Pow {
            base: Box::new(base),
            exp,
        })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_close()?;
                Ok(inner)
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            _ => Err(self.unexpected(OPERAND.to_vec())),
        }
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b')') => {
                self.pos += 1;
                Ok(())
            }
            None => Err(self.error(ParseErrorKind::UnbalancedParen, vec!["')'"])),
            Some(_) => Err(self.unexpected(vec!["operator", "')'"])),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.peek().is_some_and(|c| c.is_ascii_digit()) {
                p.pos += 1;
            }
            p.pos - s
        };
        digits(self);
        if self.peek() == Some(b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(self.error(ParseErrorKind::BadNumber, vec!["exponent digits"]));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        let value: f64 = text.parse().map_err(|_| ParseError {
            offset: start,
            kind: ParseErrorKind::BadNumber,
            expected: vec!["number"],
        })?;
        if !value.is_finite() {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::BadNumber,
                expected: vec!["finite number"],
            });
        }
        Ok(Expr::Num(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
        let at = |kind| ParseError {
            offset: start,
            kind,
            expected: OPERAND.to_vec(),
        };
        if name == "t" {
            return Ok(Expr::Time);
        }
        if let Some(func) = Func::from_name(name) {
            self.skip_ws();
            if self.peek() != Some(b'(') {
                return Err(self.unexpected(vec!["'('"]));
            }
            self.pos += 1;
            let arg = self.expr()?;
            self.expect_close()?;
            return Ok(Expr::Call {
                func,
                arg: Box::new(arg),
                offset: start,
            });
        }
        if let Some(rest) = name.strip_prefix('x') {
            if rest.is_empty() || !rest.bytes().all(|c| c.is_ascii_digit()) {
                if rest.is_empty() {
                    return Err(at(ParseErrorKind::BadIndex(name.to_string())));
                }
                return Err(at(ParseErrorKind::UnknownIdentifier(name.to_string())));
            }
            let index = rest
                .parse::<usize>()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| at(ParseErrorKind::BadIndex(name.to_string())))?;
            if !self.allow_state {
                return Err(at(ParseErrorKind::StateNotAllowed));
            }
            return Ok(Expr::State(index));
        }
        Err(at(ParseErrorKind::UnknownIdentifier(name.to_string())))
    }
}

impl Expr {
    /// Evaluates with state `x` (1-based indexing into the slice) at time `t`.
    pub fn eval<T: Real>(&self, x: &[T], t: T) -> Result<T> {
        Ok(match self {
            Expr::Num(v) => T::lit(*v),
            Expr::State(i) => *x.get(i - 1).ok_or_else(|| Error::Eval {
                offset: 0,
                message: format!("x{i} is out of range for a state of length {}", x.len()),
            })?,
            Expr::Time => t,
            Expr::Neg(e) => -e.eval(x, t)?,
            Expr::Binary { op, lhs, rhs } => {
                let a = lhs.eval(x, t)?;
                let b = rhs.eval(x, t)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Pow { base, exp } => base.eval(x, t)?.powi(*exp as i32),
            Expr::Call { func, arg, offset } => {
                let v = arg.eval(x, t)?;
                let domain = |message: &str| Error::Eval {
                    offset: *offset,
                    message: message.to_string(),
                };
                match func {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Tan => v.tan(),
                    Func::Exp => v.exp(),
                    Func::Tanh => v.tanh(),
                    Func::Log => {
                        if !(v > T::zero()) {
                            return Err(domain("log of a non-positive value"));
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < T::zero() {
                            return Err(domain("sqrt of a negative value"));
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }

    /// Largest referenced state index (0 if none).
    pub fn max_state_index(&self) -> usize {
        match self {
            Expr::State(i) => *i,
            Expr::Num(_) | Expr::Time => 0,
            Expr::Neg(e) | Expr::Pow { base: e, .. } | Expr::Call { arg: e, .. } => {
                e.max_state_index()
            }
            Expr::Binary { lhs, rhs, .. } => lhs.max_state_index().max(rhs.max_state_index()),
        }
    }
}

/// Prints a form that re-parses to a structurally identical tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::State(i) => write!(f, "x{i}"),
            Expr::Time => write!(f, "t"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Expr::Pow { base, exp } => write!(f, "{base}^{exp}"),
            Expr::Call { func, arg, .. } => write!(f, "{}({arg})", func.name()),
        }
    }
}

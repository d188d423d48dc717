//! Recursive-descent parser for the field expression grammar.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?           // right-associative
//! atom  := number | 'x'<index> | 'abs2' | func '(' expr ')' | '(' expr ')'
//! func  := exp | log | sqrt | sin | cos
//! ```
//!
//! Variables are 1-based (`x1..xn`); whitespace is insignificant.

use std::fmt;

use thiserror::Error;

use super::expr::{Expr, Func};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownIdentifier(String),
    VariableOutOfRange { index: usize, n: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset into the input.
    pub position: usize,
    pub expected: Vec<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::Syntax => write!(
                f,
                "syntax error at position {}: expected one of [{}]",
                self.position,
                self.expected.join(", ")
            ),
            ParseErrorKind::UnknownIdentifier(name) => {
                write!(f, "unknown identifier `{name}` at position {}", self.position)
            }
            ParseErrorKind::VariableOutOfRange { index, n } => write!(
                f,
                "variable index out of range at position {}: x{index} with n = {n}",
                self.position
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    tok_start: usize,
    n: usize,
}

pub fn parse(text: &str, n: usize) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: text,
        pos: 0,
        tok: Tok::End,
        tok_start: 0,
        n,
    };
    p.advance()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.syntax(&["+", "-", "*", "/", "^", "end of input"]));
    }
    Ok(e)
}

impl Parser<'_> {
    fn syntax(&self, expected: &[&str]) -> ParseError {
        ParseError {
            kind: ParseErrorKind::Syntax,
            position: self.tok_start,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
        self.tok_start = self.pos;
        if self.pos >= bytes.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = bytes[self.pos] as char;
        if c.is_ascii_digit() || c == '.' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
                let mut look = self.pos + 1;
                if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
                    look += 1;
                }
                if look < bytes.len() && bytes[look].is_ascii_digit() {
                    self.pos = look;
                    while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                }
            }
            let text = &self.src[start..self.pos];
            let v: f64 = text.parse().map_err(|_| self.syntax(&["number"]))?;
            self.tok = Tok::Num(v);
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = self.pos;
            while self.pos < bytes.len() && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_') {
                self.pos += 1;
            }
            self.tok = Tok::Ident(self.src[start..self.pos].to_string());
        } else if "+-*/^()".contains(c) {
            self.pos += 1;
            self.tok = Tok::Sym(c);
        } else {
            return Err(ParseError {
                kind: ParseErrorKind::Syntax,
                position: self.pos,
                expected: vec!["number".into(), "identifier".into(), "operator".into()],
            });
        }
        Ok(())
    }

    fn eat(&mut self, c: char) -> Result<bool, ParseError> {
        if self.tok == Tok::Sym(c) {
            self.advance()?;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+')? {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-')? {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*')? {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/')? {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat('-')? {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat('^')? {
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        const ATOM: &[&str] = &["number", "variable", "function", "abs2", "("];
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Const(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let e = self.expr()?;
                if !self.eat(')')? {
                    return Err(self.syntax(&[")", "+", "-", "*", "/", "^"]));
                }
                Ok(e)
            }
            Tok::Ident(name) => {
                let start = self.tok_start;
                if name == "abs2" {
                    self.advance()?;
                    return Ok(Expr::abs2(self.n));
                }
                if let Some(f) = Func::from_name(&name) {
                    self.advance()?;
                    if !self.eat('(')? {
                        return Err(self.syntax(&["("]));
                    }
                    let arg = self.expr()?;
                    if !self.eat(')')? {
                        return Err(self.syntax(&[")", "+", "-", "*", "/", "^"]));
                    }
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if let Some(digits) = name.strip_prefix('x') {
                    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                        let index: usize = digits.parse().unwrap_or(usize::MAX);
                        if index == 0 || index > self.n {
                            return Err(ParseError {
                                kind: ParseErrorKind::VariableOutOfRange { index, n: self.n },
                                position: start,
                                expected: vec![format!("x1..x{}", self.n)],
                            });
                        }
                        self.advance()?;
                        return Ok(Expr::Var(index - 1));
                    }
                }
                Err(ParseError {
                    kind: ParseErrorKind::UnknownIdentifier(name),
                    position: start,
                    expected: ATOM.iter().map(|s| s.to_string()).collect(),
                })
            }
            _ => Err(self.syntax(ATOM)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, n: usize, x: &[f64]) -> f64 {
        parse(s, n).unwrap().eval(x).unwrap()
    }

    #[test]
    fn spec_examples() {
        assert_eq!(ev("x1^2 + x2^2", 2, &[1.0, 2.0]), 5.0);
        assert_eq!(ev("-log(1 - abs2)", 2, &[0.0, 0.0]), 0.0);
        let err = parse("x3", 2).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::VariableOutOfRange { index: 3, n: 2 });
        assert_eq!(err.position, 0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("2^3^2", 1, &[0.0]), 512.0);
        assert_eq!(ev("-2^2", 1, &[0.0]), -4.0);
        assert_eq!(ev("2^-1", 1, &[0.0]), 0.5);
        assert_eq!(ev("8 / 4 / 2", 1, &[0.0]), 1.0);
        assert_eq!(ev("1 - 2 - 3", 1, &[0.0]), -4.0);
        assert_eq!(ev("1 + 2 * 3 ^ 2", 1, &[0.0]), 19.0);
        assert_eq!(ev("--x1", 1, &[3.0]), 3.0);
        assert_eq!(ev(" 1.5e1 *x1", 1, &[2.0]), 30.0);
        assert_eq!(ev("abs2", 3, &[1.0, 2.0, 2.0]), 9.0);
        assert_eq!(ev("x1^0.5", 1, &[4.0]), 2.0);
    }

    #[test]
    fn errors_report_position() {
        let e = parse("x1 + * x2", 2).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
        assert_eq!(e.position, 5);
        assert!(e.expected.iter().any(|s| s == "number"));

        let e = parse("foo(x1)", 1).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnknownIdentifier("foo".into()));

        let e = parse("(x1 + 1", 1).unwrap_err();
        assert_eq!(e.position, 7);
        assert!(e.expected.contains(&")".to_string()));

        let e = parse("x1 x1", 1).unwrap_err();
        assert_eq!(e.position, 3);

        assert!(parse("x0", 2).is_err());
        assert!(parse("exp x1", 1).is_err());
        assert!(parse("1 $ 2", 1).is_err());
        assert!(parse("", 1).is_err());
    }
}

//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" exponent ] ;
//! exponent= unary ;                      (* must fold to an integer constant *)
//! primary = number | ident | ident "(" expr { "," expr } ")" | "(" expr ")" ;
//! ```
//!
//! Identifiers resolve, in order, to coordinates, named parameters, then the
//! constants `pi` and `e`. Functions: sin cos tan exp sqrt abs sign.

use std::collections::BTreeMap;

use super::{Expr, ExprError, UnaryOp};

/// Names visible to the parser.
#[derive(Debug, Clone, Default)]
pub struct Scope<'a> {
    pub coords: &'a [String],
    pub params: Option<&'a BTreeMap<String, f64>>,
}

pub fn parse_expr(source: &str, coords: &[String]) -> Result<Expr, ExprError> {
    parse_expr_with(source, &Scope { coords, params: None })
}

pub fn parse_expr_with(source: &str, scope: &Scope<'_>) -> Result<Expr, ExprError> {
    let tokens = lex(source)?;
    if tokens.is_empty() {
        return Err(ExprError::Syntax {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    let mut p = Parser {
        tokens,
        at: 0,
        scope,
        end: source.len(),
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        return Err(ExprError::Syntax {
            pos: t.pos,
            msg: format!("unexpected {}", t.kind.describe()),
        });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl Kind {
    fn describe(&self) -> String {
        match self {
            Kind::Num(v) => format!("number {v}"),
            Kind::Ident(s) => format!("identifier `{s}`"),
            Kind::Op(c) => format!("`{c}`"),
            Kind::LParen => "`(`".into(),
            Kind::RParen => "`)`".into(),
            Kind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: Kind,
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit())
        {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
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
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: Kind::Num(v),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: Kind::Ident(src[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => Kind::Op(c),
            '(' => Kind::LParen,
            ')' => Kind::RParen,
            ',' => Kind::Comma,
            _ => {
                return Err(ExprError::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push(Token { kind, pos: start });
        i += c.len_utf8();
    }
    Ok(out)
}

struct Parser<'s, 'a> {
    tokens: Vec<Token>,
    at: usize,
    scope: &'s Scope<'a>,
    end: usize,
}

impl Parser<'_, '_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn eat_op(&mut self, op: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: Kind::Op(c), .. }) if *c == op) {
            self.at += 1;
            true
        } else {
            false
        }
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat_op('-') {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat_op('/') {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op('-') {
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.eat_op('^') {
            let pos = self.pos();
            let exp = self.unary()?;
            let n = exp
                .as_const()
                .filter(|c| c.fract() == 0.0 && c.abs() <= i32::MAX as f64)
                .ok_or(ExprError::NonIntegerExponent { pos })?;
            return Ok(Expr::pow(base, n as i32));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        let tok = self.next().ok_or(ExprError::Syntax {
            pos,
            msg: "unexpected end of input".into(),
        })?;
        match tok.kind {
            Kind::Num(v) => Ok(Expr::constant(v)),
            Kind::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Kind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: Kind::LParen, .. })) {
                    self.at += 1;
                    return self.call(name, tok.pos);
                }
                self.resolve(&name, tok.pos)
            }
            other => Err(ExprError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn call(&mut self, name: String, pos: usize) -> Result<Expr, ExprError> {
        let mut args = Vec::new();
        if matches!(self.peek(), Some(Token { kind: Kind::RParen, .. })) {
            self.at += 1;
        } else {
            loop {
                args.push(self.expr()?);
                match self.next() {
                    Some(Token { kind: Kind::Comma, .. }) => continue,
                    Some(Token { kind: Kind::RParen, .. }) => break,
                    Some(t) => {
                        return Err(ExprError::Syntax {
                            pos: t.pos,
                            msg: format!("expected `,` or `)`, found {}", t.kind.describe()),
                        })
                    }
                    None => {
                        return Err(ExprError::Syntax {
                            pos: self.end,
                            msg: "unclosed argument list".into(),
                        })
                    }
                }
            }
        }
        let op = UnaryOp::from_name(&name).ok_or_else(|| ExprError::UnknownIdentifier {
            name: name.clone(),
            pos,
        })?;
        if args.len() != 1 {
            return Err(ExprError::Arity {
                name,
                expected: 1,
                found: args.len(),
                pos,
            });
        }
        Ok(Expr::unary(op, args.pop().unwrap()))
    }

    fn resolve(&self, name: &str, pos: usize) -> Result<Expr, ExprError> {
        if let Some(i) = self.scope.coords.iter().position(|c| c == name) {
            return Ok(Expr::var(i));
        }
        if let Some(v) = self.scope.params.and_then(|p| p.get(name)) {
            return Ok(Expr::constant(*v));
        }
        match name {
            "pi" => Ok(Expr::constant(std::f64::consts::PI)),
            "e" => Ok(Expr::constant(std::f64::consts::E)),
            _ => Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                pos,
            }),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.next() {
            Some(Token { kind: Kind::RParen, .. }) => Ok(()),
            Some(t) => Err(ExprError::Syntax {
                pos: t.pos,
                msg: format!("expected `)`, found {}", t.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                pos: self.end,
                msg: "expected `)`".into(),
            }),
        }
    }
}

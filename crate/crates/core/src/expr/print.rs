use std::fmt;

use super::{BinaryOp, Expr, Node, UnaryOp};

const ADD: u8 = 1;
const MUL: u8 = 2;
const NEG: u8 = 3;
const POW: u8 = 4;
const ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Const(c) if *c < 0.0 => NEG,
        Node::Const(_) | Node::Var(_) => ATOM,
        Node::Unary(UnaryOp::Neg, _) => NEG,
        Node::Unary(..) => ATOM,
        Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => ADD,
        Node::Binary(..) => MUL,
        Node::Pow(..) => POW,
    }
}

/// Borrowing printer that renders variables with their coordinate names.
pub struct Named<'a> {
    expr: &'a Expr,
    coords: Option<&'a [String]>,
}

impl Expr {
    /// Printable form using the given coordinate names; output re-parses to an
    /// equivalent tree.
    pub fn display<'a>(&'a self, coords: &'a [String]) -> Named<'a> {
        Named {
            expr: self,
            coords: Some(coords),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Named {
            expr: self,
            coords: None,
        }
        .fmt(f)
    }
}

impl Named<'_> {
    fn child(&self, e: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = Named {
            expr: e,
            coords: self.coords,
        };
        if precedence(e) < min {
            write!(f, "({inner})")
        } else {
            write!(f, "{inner}")
        }
    }
}

impl fmt::Display for Named<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr.node() {
            Node::Const(c) => write!(f, "{c}"),
            Node::Var(i) => match self.coords.and_then(|c| c.get(*i)) {
                Some(name) => f.write_str(name),
                None => write!(f, "x{i}"),
            },
            Node::Unary(UnaryOp::Neg, a) => {
                f.write_str("-")?;
                self.child(a, NEG, f)
            }
            Node::Unary(op, a) => {
                write!(f, "{}(", op.name())?;
                self.child(a, 0, f)?;
                f.write_str(")")
            }
            Node::Binary(op, a, b) => {
                let p = if matches!(op, BinaryOp::Add | BinaryOp::Sub) {
                    ADD
                } else {
                    MUL
                };
                self.child(a, p, f)?;
                write!(f, " {} ", op.symbol())?;
                // Right operands of `-` and `/` need parentheses at equal precedence.
                let rmin = if matches!(op, BinaryOp::Sub | BinaryOp::Div) {
                    p + 1
                } else {
                    p
                };
                self.child(b, rmin, f)
            }
            Node::Pow(a, e) => {
                self.child(a, ATOM, f)?;
                write!(f, "^{e}")
            }
        }
    }
}

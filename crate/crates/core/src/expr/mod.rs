//! Scalar expressions over chart coordinates and the vector fields built from them.
//!
//! Expressions are immutable trees with shared children, so cloning is cheap and
//! the same sub-tree can appear in many Jacobian entries or brackets. Every
//! constructor in [`Expr`] folds constants and removes neutral elements, which is
//! what keeps iterated brackets like `ad^j_{X0} X^k` small enough to be useful.

mod field;
mod parse;
mod print;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use field::{jacobian, lie_bracket, ExprMatrix, VectorField};
pub use parse::{parse_expr, parse_expr_with, Scope};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{name}` takes {expected} argument(s), got {found} (at {pos})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        pos: usize,
    },
    #[error("exponent must be a constant integer (at {pos})")]
    NonIntegerExponent { pos: usize },
    #[error("domain error evaluating `{expr}`: {reason}")]
    Domain { expr: String, reason: &'static str },
    #[error("point has dimension {found}, expression needs at least {needed}")]
    PointDimension { needed: usize, found: usize },
    #[error("coordinate charts differ: {0:?} vs {1:?}")]
    ChartMismatch(Vec<String>, Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Sqrt,
    Abs,
    /// `sign(0) = 0`; appears as the derivative of `abs`.
    Sign,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Tan => "tan",
            UnaryOp::Exp => "exp",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
            UnaryOp::Sign => "sign",
        }
    }

    pub(crate) fn from_name(name: &str) -> Option<UnaryOp> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "tan" => UnaryOp::Tan,
            "exp" => UnaryOp::Exp,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            "sign" => UnaryOp::Sign,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> Result<f64, &'static str> {
        let y = match self {
            UnaryOp::Neg => -x,
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Tan => {
                if x.cos() == 0.0 {
                    return Err("tan at a pole");
                }
                x.tan()
            }
            UnaryOp::Exp => x.exp(),
            UnaryOp::Sqrt => {
                if x < 0.0 {
                    return Err("sqrt of a negative number");
                }
                x.sqrt()
            }
            UnaryOp::Abs => x.abs(),
            UnaryOp::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        if y.is_finite() {
            Ok(y)
        } else {
            Err("non-finite result")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Expr),
    Binary(BinaryOp, Expr, Expr),
    Pow(Expr, i32),
}

/// A shared, immutable expression tree.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self)
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(c: f64) -> Expr {
        Expr(Arc::new(Node::Const(c)))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(index: usize) -> Expr {
        Expr(Arc::new(Node::Var(index)))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn unary(op: UnaryOp, arg: Expr) -> Expr {
        if let Some(c) = arg.as_const() {
            if let Ok(v) = op.apply(c) {
                return Expr::constant(v);
            }
        }
        match (op, arg.node()) {
            (UnaryOp::Neg, Node::Unary(UnaryOp::Neg, inner)) => return inner.clone(),
            (UnaryOp::Neg, Node::Binary(BinaryOp::Sub, a, b)) => {
                return Expr::sub(b.clone(), a.clone())
            }
            (UnaryOp::Abs, Node::Unary(UnaryOp::Abs, _)) => return arg,
            (UnaryOp::Sign, Node::Unary(UnaryOp::Sign, _)) => return arg,
            _ => {}
        }
        Expr(Arc::new(Node::Unary(op, arg)))
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::unary(UnaryOp::Neg, a)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return Expr::constant(x + y),
            (Some(x), _) if x == 0.0 => return b,
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        if let Node::Unary(UnaryOp::Neg, nb) = b.node() {
            return Expr::sub(a, nb.clone());
        }
        if let Node::Unary(UnaryOp::Neg, na) = a.node() {
            return Expr::sub(b, na.clone());
        }
        Expr(Arc::new(Node::Binary(BinaryOp::Add, a, b)))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return Expr::constant(x - y),
            (Some(x), _) if x == 0.0 => return Expr::neg(b),
            (_, Some(y)) if y == 0.0 => return a,
            _ => {}
        }
        if a == b {
            return Expr::zero();
        }
        if let Node::Unary(UnaryOp::Neg, nb) = b.node() {
            return Expr::add(a, nb.clone());
        }
        Expr(Arc::new(Node::Binary(BinaryOp::Sub, a, b)))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => return Expr::constant(x * y),
            (Some(x), _) | (_, Some(x)) if x == 0.0 => return Expr::zero(),
            (Some(x), _) if x == 1.0 => return b,
            (_, Some(y)) if y == 1.0 => return a,
            (Some(x), _) if x == -1.0 => return Expr::neg(b),
            (_, Some(y)) if y == -1.0 => return Expr::neg(a),
            _ => {}
        }
        // Pull negations and constants to the front so they fold together.
        if let Node::Unary(UnaryOp::Neg, na) = a.node() {
            return Expr::neg(Expr::mul(na.clone(), b));
        }
        if let Node::Unary(UnaryOp::Neg, nb) = b.node() {
            return Expr::neg(Expr::mul(a, nb.clone()));
        }
        if b.as_const().is_some() {
            return Expr::mul(b, a);
        }
        if let (Some(x), Node::Binary(BinaryOp::Mul, ba, bb)) = (a.as_const(), b.node()) {
            if let Some(y) = ba.as_const() {
                return Expr::mul(Expr::constant(x * y), bb.clone());
            }
        }
        Expr(Arc::new(Node::Binary(BinaryOp::Mul, a, b)))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => return Expr::constant(x / y),
            (Some(x), _) if x == 0.0 => return Expr::zero(),
            (_, Some(y)) if y == 1.0 => return a,
            (_, Some(y)) if y == -1.0 => return Expr::neg(a),
            _ => {}
        }
        Expr(Arc::new(Node::Binary(BinaryOp::Div, a, b)))
    }

    pub fn pow(base: Expr, exp: i32) -> Expr {
        match exp {
            0 => return Expr::one(),
            1 => return base,
            _ => {}
        }
        if let Some(c) = base.as_const() {
            let v = c.powi(exp);
            if v.is_finite() {
                return Expr::constant(v);
            }
        }
        if let Node::Pow(inner, e) = base.node() {
            if let Some(prod) = e.checked_mul(exp) {
                return Expr::pow(inner.clone(), prod);
            }
        }
        Expr(Arc::new(Node::Pow(base, exp)))
    }

    /// Largest variable index used plus one (0 for constant expressions).
    pub fn arity(&self) -> usize {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Unary(_, a) | Node::Pow(a, _) => a.arity(),
            Node::Binary(_, a, b) => a.arity().max(b.arity()),
        }
    }

    /// Evaluate at a point; errors name the offending sub-expression.
    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        let needed = self.arity();
        if x.len() < needed {
            return Err(ExprError::PointDimension {
                needed,
                found: x.len(),
            });
        }
        self.eval_unchecked(x)
    }

    fn eval_unchecked(&self, x: &[f64]) -> Result<f64, ExprError> {
        let domain = |e: &Expr, reason| ExprError::Domain {
            expr: e.to_string(),
            reason,
        };
        match self.node() {
            Node::Const(c) => Ok(*c),
            Node::Var(i) => Ok(x[*i]),
            Node::Unary(op, a) => {
                let v = a.eval_unchecked(x)?;
                op.apply(v).map_err(|r| domain(self, r))
            }
            Node::Binary(op, a, b) => {
                let u = a.eval_unchecked(x)?;
                let v = b.eval_unchecked(x)?;
                let r = match op {
                    BinaryOp::Add => u + v,
                    BinaryOp::Sub => u - v,
                    BinaryOp::Mul => u * v,
                    BinaryOp::Div => {
                        if v == 0.0 {
                            return Err(domain(self, "division by zero"));
                        }
                        u / v
                    }
                };
                if r.is_finite() {
                    Ok(r)
                } else {
                    Err(domain(self, "non-finite result"))
                }
            }
            Node::Pow(a, e) => {
                let v = a.eval_unchecked(x)?;
                if v == 0.0 && *e < 0 {
                    return Err(domain(self, "zero to a negative power"));
                }
                let r = v.powi(*e);
                if r.is_finite() {
                    Ok(r)
                } else {
                    Err(domain(self, "non-finite result"))
                }
            }
        }
    }

    /// Exact partial derivative with respect to coordinate `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match self.node() {
            Node::Const(_) => Expr::zero(),
            Node::Var(i) => {
                if *i == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Unary(op, a) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                let outer = match op {
                    UnaryOp::Neg => return Expr::neg(da),
                    UnaryOp::Sin => Expr::unary(UnaryOp::Cos, a.clone()),
                    UnaryOp::Cos => Expr::neg(Expr::unary(UnaryOp::Sin, a.clone())),
                    UnaryOp::Tan => Expr::pow(Expr::unary(UnaryOp::Cos, a.clone()), -2),
                    UnaryOp::Exp => self.clone(),
                    UnaryOp::Sqrt => {
                        return Expr::div(da, Expr::mul(Expr::constant(2.0), self.clone()))
                    }
                    UnaryOp::Abs => Expr::unary(UnaryOp::Sign, a.clone()),
                    UnaryOp::Sign => return Expr::zero(),
                };
                Expr::mul(outer, da)
            }
            Node::Binary(op, a, b) => {
                let da = a.diff(var);
                let db = b.diff(var);
                match op {
                    BinaryOp::Add => Expr::add(da, db),
                    BinaryOp::Sub => Expr::sub(da, db),
                    BinaryOp::Mul => Expr::add(
                        Expr::mul(da, b.clone()),
                        Expr::mul(a.clone(), db),
                    ),
                    BinaryOp::Div => {
                        // (a' b - a b') / b^2, with the quotient rule short-circuited
                        // when the denominator is constant in `var`.
                        if db.is_zero() {
                            Expr::div(da, b.clone())
                        } else {
                            Expr::div(
                                Expr::sub(
                                    Expr::mul(da, b.clone()),
                                    Expr::mul(a.clone(), db),
                                ),
                                Expr::pow(b.clone(), 2),
                            )
                        }
                    }
                }
            }
            Node::Pow(a, e) => {
                let da = a.diff(var);
                if da.is_zero() {
                    return Expr::zero();
                }
                Expr::mul(
                    Expr::mul(Expr::constant(*e as f64), Expr::pow(a.clone(), e - 1)),
                    da,
                )
            }
        }
    }

    /// Replace every variable `i` by `subs[i]`.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs[*i].clone(),
            Node::Unary(op, a) => Expr::unary(*op, a.substitute(subs)),
            Node::Binary(op, a, b) => {
                let (a, b) = (a.substitute(subs), b.substitute(subs));
                match op {
                    BinaryOp::Add => Expr::add(a, b),
                    BinaryOp::Sub => Expr::sub(a, b),
                    BinaryOp::Mul => Expr::mul(a, b),
                    BinaryOp::Div => Expr::div(a, b),
                }
            }
            Node::Pow(a, e) => Expr::pow(a.substitute(subs), *e),
        }
    }

    /// Whether the expression depends on coordinate `var` at all.
    pub fn depends_on(&self, var: usize) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(i) => *i == var,
            Node::Unary(_, a) | Node::Pow(a, _) => a.depends_on(var),
            Node::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    /// Number of nodes, counting shared sub-trees once per occurrence.
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Unary(_, a) | Node::Pow(a, _) => 1 + a.size(),
            Node::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::add(self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sub(self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::mul(self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::div(self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{parse_expr_with, Expr, ExprError, Scope};

/// Dense matrix of expressions, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprMatrix {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<Expr>,
}

impl ExprMatrix {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Expr) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        ExprMatrix {
            rows,
            cols,
            entries,
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| Expr::zero())
    }

    /// Matrix whose columns are the given vector fields.
    pub fn from_columns(cols: &[VectorField]) -> Self {
        let rows = cols.first().map_or(0, |c| c.dim());
        Self::from_fn(rows, cols.len(), |i, j| cols[j].components[i].clone())
    }

    pub fn get(&self, i: usize, j: usize) -> &Expr {
        &self.entries[i * self.cols + j]
    }

    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.get(i, j).eval(x)?;
            }
        }
        Ok(m)
    }

    pub fn mul(&self, rhs: &ExprMatrix) -> ExprMatrix {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        ExprMatrix::from_fn(self.rows, rhs.cols, |i, j| {
            (0..self.cols).fold(Expr::zero(), |acc, k| {
                Expr::add(acc, Expr::mul(self.get(i, k).clone(), rhs.get(k, j).clone()))
            })
        })
    }

    pub fn sub(&self, rhs: &ExprMatrix) -> ExprMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ExprMatrix::from_fn(self.rows, self.cols, |i, j| {
            Expr::sub(self.get(i, j).clone(), rhs.get(i, j).clone())
        })
    }

    pub fn map(&self, mut f: impl FnMut(&Expr) -> Expr) -> ExprMatrix {
        ExprMatrix {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(&mut f).collect(),
        }
    }

    /// Sub-matrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> ExprMatrix {
        ExprMatrix::from_fn(rows.len(), cols.len(), |i, j| self.get(rows[i], cols[j]).clone())
    }
}

/// A vector field on a coordinate chart: one expression per coordinate.
#[derive(Clone, PartialEq)]
pub struct VectorField {
    coords: Arc<[String]>,
    pub components: Vec<Expr>,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VectorField(")?;
        for (i, c) in self.components.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", c.display(&self.coords))?;
        }
        write!(f, ")")
    }
}

impl VectorField {
    pub fn new(coords: Arc<[String]>, components: Vec<Expr>) -> Result<Self, ExprError> {
        if components.len() != coords.len() {
            return Err(ExprError::PointDimension {
                needed: coords.len(),
                found: components.len(),
            });
        }
        if let Some(bad) = components.iter().map(Expr::arity).find(|&a| a > coords.len()) {
            return Err(ExprError::PointDimension {
                needed: bad,
                found: coords.len(),
            });
        }
        Ok(VectorField { coords, components })
    }

    pub fn parse(sources: &[&str], scope: &Scope<'_>) -> Result<Self, ExprError> {
        let components = sources
            .iter()
            .map(|s| parse_expr_with(s, scope))
            .collect::<Result<Vec<_>, _>>()?;
        VectorField::new(scope.coords.to_vec().into(), components)
    }

    pub fn zero(coords: Arc<[String]>) -> Self {
        let components = vec![Expr::zero(); coords.len()];
        VectorField { coords, components }
    }

    /// Constant field `∂/∂x_i`.
    pub fn coordinate(coords: Arc<[String]>, i: usize) -> Self {
        let mut f = VectorField::zero(coords);
        f.components[i] = Expr::one();
        f
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn coords(&self) -> &Arc<[String]> {
        &self.coords
    }

    pub fn eval(&self, x: &[f64]) -> Result<DVector<f64>, ExprError> {
        let mut v = DVector::zeros(self.dim());
        self.eval_into(x, v.as_mut_slice())?;
        Ok(v)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), ExprError> {
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(x)?;
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero)
    }

    /// Entry `(i, j)` is `∂ component_i / ∂ x_j`.
    pub fn jacobian(&self) -> ExprMatrix {
        let d = self.dim();
        ExprMatrix::from_fn(d, d, |i, j| self.components[i].diff(j))
    }

    /// Lie derivative of a scalar: `Σ_j X_j ∂e/∂x_j`.
    pub fn lie_derivative(&self, e: &Expr) -> Expr {
        self.components
            .iter()
            .enumerate()
            .fold(Expr::zero(), |acc, (j, xj)| {
                Expr::add(acc, Expr::mul(xj.clone(), e.diff(j)))
            })
    }

    /// `[self, other] = (D other) self − (D self) other`.
    pub fn bracket(&self, other: &VectorField) -> Result<VectorField, ExprError> {
        self.same_chart(other)?;
        let components = (0..self.dim())
            .map(|i| {
                Expr::sub(
                    self.lie_derivative(&other.components[i]),
                    other.lie_derivative(&self.components[i]),
                )
            })
            .collect();
        Ok(VectorField {
            coords: self.coords.clone(),
            components,
        })
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            coords: self.coords.clone(),
            components: self
                .components
                .iter()
                .map(|e| Expr::mul(Expr::constant(c), e.clone()))
                .collect(),
        }
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField, ExprError> {
        self.same_chart(other)?;
        Ok(VectorField {
            coords: self.coords.clone(),
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| Expr::add(a.clone(), b.clone()))
                .collect(),
        })
    }

    fn same_chart(&self, other: &VectorField) -> Result<(), ExprError> {
        if self.coords != other.coords {
            return Err(ExprError::ChartMismatch(
                self.coords.to_vec(),
                other.coords.to_vec(),
            ));
        }
        Ok(())
    }
}

/// Free function form of [`VectorField::jacobian`].
pub fn jacobian(v: &VectorField) -> ExprMatrix {
    v.jacobian()
}

/// Free function form of [`VectorField::bracket`].
pub fn lie_bracket(x: &VectorField, y: &VectorField) -> Result<VectorField, ExprError> {
    x.bracket(y)
}

//! Control systems `ẋ = X0(x) + Σ u_k X^k(x)`, their control sets, and
//! coordinate projections.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::span_rank;
use crate::expr::{Expr, ExprError, VectorField};
use crate::lp::{LinearProgram, LpStatus};

pub const DEFAULT_GENERATOR_COUNT: usize = 64;

fn default_radius() -> f64 {
    1.0
}

fn default_generator_count() -> usize {
    DEFAULT_GENERATOR_COUNT
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("system needs at least one coordinate and one control field")]
    Empty,
    #[error("control field {index} has {found} components, expected {expected}")]
    FieldDimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid projection: {0}")]
    Projection(String),
}

/// Compact convex control set `U ⊂ R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlSet {
    Polytope {
        vertices: Vec<Vec<f64>>,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Interval {
        lo: f64,
        hi: f64,
    },
    /// `{u : |u| <= radius, |u2| <= u1 tan(alpha)}`.
    DiskSector {
        alpha: f64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_generator_count")]
        generator_count: usize,
    },
    Scaled {
        eps: f64,
        inner: std::boxed::Box<ControlSet>,
    },
    Product {
        factors: Vec<ControlSet>,
    },
}

impl ControlSet {
    pub fn interval(lo: f64, hi: f64) -> Self {
        ControlSet::Interval { lo, hi }
    }

    pub fn cube(m: usize, lo: f64, hi: f64) -> Self {
        ControlSet::Box {
            lo: vec![lo; m],
            hi: vec![hi; m],
        }
    }

    pub fn disk_sector(alpha: f64) -> Self {
        ControlSet::DiskSector {
            alpha,
            radius: 1.0,
            generator_count: DEFAULT_GENERATOR_COUNT,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSet::Polytope { vertices } => vertices.first().map_or(0, Vec::len),
            ControlSet::Box { lo, .. } => lo.len(),
            ControlSet::Interval { .. } => 1,
            ControlSet::DiskSector { .. } => 2,
            ControlSet::Scaled { inner, .. } => inner.dim(),
            ControlSet::Product { factors } => factors.iter().map(ControlSet::dim).sum(),
        }
    }

    /// Finite inner approximation: every returned point lies in `U`, and all
    /// extreme points of polyhedral variants are included.
    pub fn generators(&self) -> Vec<DVector<f64>> {
        match self {
            ControlSet::Polytope { vertices } => vertices
                .iter()
                .map(|v| DVector::from_column_slice(v))
                .collect(),
            ControlSet::Box { lo, hi } => {
                let m = lo.len();
                let mut out = Vec::with_capacity(1 << m);
                for mask in 0..(1usize << m) {
                    out.push(DVector::from_fn(m, |i, _| {
                        if mask >> i & 1 == 1 {
                            hi[i]
                        } else {
                            lo[i]
                        }
                    }));
                }
                dedup(out)
            }
            ControlSet::Interval { lo, hi } => {
                dedup(vec![DVector::from_element(1, *lo), DVector::from_element(1, *hi)])
            }
            ControlSet::DiskSector {
                alpha,
                radius,
                generator_count,
            } => {
                let n = (*generator_count).max(2);
                let mut out: Vec<DVector<f64>> = (0..n)
                    .map(|j| {
                        let psi = -alpha + 2.0 * alpha * j as f64 / (n - 1) as f64;
                        DVector::from_vec(vec![radius * psi.cos(), radius * psi.sin()])
                    })
                    .collect();
                out.push(DVector::zeros(2));
                out
            }
            ControlSet::Scaled { eps, inner } => {
                inner.generators().into_iter().map(|g| g * *eps).collect()
            }
            ControlSet::Product { factors } => {
                let mut acc: Vec<Vec<f64>> = vec![Vec::new()];
                for f in factors {
                    let gens = f.generators();
                    acc = acc
                        .iter()
                        .flat_map(|prefix| {
                            gens.iter().map(move |g| {
                                let mut v = prefix.clone();
                                v.extend(g.iter());
                                v
                            })
                        })
                        .collect();
                }
                acc.into_iter().map(DVector::from_vec).collect()
            }
        }
    }

    /// Exact support function `max_{u in U} <p, u>`.
    pub fn support(&self, p: &[f64]) -> f64 {
        match self {
            ControlSet::Polytope { vertices } => vertices
                .iter()
                .map(|v| dot(p, v))
                .fold(f64::NEG_INFINITY, f64::max),
            ControlSet::Box { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(pi, (l, h))| (pi * l).max(pi * h))
                .sum(),
            ControlSet::Interval { lo, hi } => (p[0] * lo).max(p[0] * hi),
            ControlSet::DiskSector { alpha, radius, .. } => {
                let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
                if norm == 0.0 {
                    return 0.0;
                }
                let beta = p[1].atan2(p[0]);
                let arc = if beta.abs() <= *alpha {
                    radius * norm
                } else {
                    let (s, c) = alpha.sin_cos();
                    radius * (p[0] * c + p[1] * s).max(p[0] * c - p[1] * s)
                };
                arc.max(0.0)
            }
            ControlSet::Scaled { eps, inner } => eps * inner.support(p),
            ControlSet::Product { factors } => {
                let mut offset = 0;
                let mut total = 0.0;
                for f in factors {
                    let m = f.dim();
                    total += f.support(&p[offset..offset + m]);
                    offset += m;
                }
                total
            }
        }
    }

    /// `εU`.
    pub fn scale(&self, eps: f64) -> Result<ControlSet, SystemError> {
        if !(eps > 0.0) {
            return Err(SystemError::NonPositiveScale(eps));
        }
        Ok(match self {
            ControlSet::Polytope { vertices } => ControlSet::Polytope {
                vertices: vertices
                    .iter()
                    .map(|v| v.iter().map(|x| x * eps).collect())
                    .collect(),
            },
            ControlSet::Box { lo, hi } => ControlSet::Box {
                lo: lo.iter().map(|x| x * eps).collect(),
                hi: hi.iter().map(|x| x * eps).collect(),
            },
            ControlSet::Interval { lo, hi } => ControlSet::Interval {
                lo: lo * eps,
                hi: hi * eps,
            },
            ControlSet::DiskSector {
                alpha,
                radius,
                generator_count,
            } => ControlSet::DiskSector {
                alpha: *alpha,
                radius: radius * eps,
                generator_count: *generator_count,
            },
            ControlSet::Scaled { eps: e, inner } => ControlSet::Scaled {
                eps: e * eps,
                inner: inner.clone(),
            },
            ControlSet::Product { factors } => ControlSet::Product {
                factors: factors
                    .iter()
                    .map(|f| f.scale(eps))
                    .collect::<Result<_, _>>()?,
            },
        })
    }

    /// Bound on the norm of the members of `U`.
    pub fn radius(&self) -> f64 {
        match self {
            ControlSet::DiskSector { radius, .. } => *radius,
            ControlSet::Scaled { eps, inner } => eps * inner.radius(),
            ControlSet::Product { factors } => factors
                .iter()
                .map(|f| f.radius().powi(2))
                .sum::<f64>()
                .sqrt(),
            _ => self
                .generators()
                .iter()
                .map(|g| g.norm())
                .fold(0.0, f64::max),
        }
    }

    /// Whether `u` satisfies the defining inequalities of the variant, with slack `tol`.
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            ControlSet::Polytope { vertices } => {
                let pts: Vec<DVector<f64>> = vertices
                    .iter()
                    .map(|v| DVector::from_column_slice(v))
                    .collect();
                in_convex_hull(&pts, &DVector::from_column_slice(u), tol)
            }
            ControlSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol),
            ControlSet::Interval { lo, hi } => u[0] >= lo - tol && u[0] <= hi + tol,
            ControlSet::DiskSector { alpha, radius, .. } => {
                let r = (u[0] * u[0] + u[1] * u[1]).sqrt();
                r <= radius + tol && u[1].abs() <= u[0] * alpha.tan() + tol
            }
            ControlSet::Scaled { eps, inner } => {
                let v: Vec<f64> = u.iter().map(|x| x / eps).collect();
                inner.contains(&v, tol / eps)
            }
            ControlSet::Product { factors } => {
                let mut offset = 0;
                factors.iter().all(|f| {
                    let m = f.dim();
                    let ok = f.contains(&u[offset..offset + m], tol);
                    offset += m;
                    ok
                })
            }
        }
    }

    fn shape_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            ControlSet::Polytope { vertices } => {
                if vertices.is_empty() {
                    out.push("polytope has no vertices".into());
                } else if vertices.iter().any(|v| v.len() != vertices[0].len()) {
                    out.push("polytope vertices have inconsistent dimensions".into());
                }
            }
            ControlSet::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    out.push("box bounds have inconsistent dimensions".into());
                } else if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    out.push("box has lo > hi on some axis".into());
                }
            }
            ControlSet::Interval { lo, hi } => {
                if lo > hi {
                    out.push(format!("interval [{lo}, {hi}] is empty"));
                }
            }
            ControlSet::DiskSector {
                alpha,
                radius,
                generator_count,
            } => {
                if !(*alpha > 0.0 && *alpha < PI / 2.0) {
                    out.push(format!("disk sector half-angle {alpha} outside (0, pi/2)"));
                }
                if !(*radius > 0.0) {
                    out.push(format!("disk sector radius {radius} is not positive"));
                }
                if *generator_count < 2 {
                    out.push("disk sector needs generator_count >= 2".into());
                }
            }
            ControlSet::Scaled { eps, inner } => {
                if !(*eps > 0.0) {
                    out.push(format!("scale factor {eps} is not positive"));
                }
                out.extend(inner.shape_problems());
            }
            ControlSet::Product { factors } => {
                if factors.is_empty() {
                    out.push("product of zero factors".into());
                }
                for f in factors {
                    out.extend(f.shape_problems());
                }
            }
        }
        out
    }

    fn contains_origin(&self) -> bool {
        match self {
            ControlSet::Polytope { vertices } => {
                let pts: Vec<DVector<f64>> = vertices
                    .iter()
                    .map(|v| DVector::from_column_slice(v))
                    .collect();
                in_convex_hull(&pts, &DVector::zeros(self.dim()), 1e-12)
            }
            ControlSet::Scaled { inner, .. } => inner.contains_origin(),
            ControlSet::Product { factors } => factors.iter().all(ControlSet::contains_origin),
            _ => self.contains(&vec![0.0; self.dim()], 0.0),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dedup(v: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(v.len());
    for g in v {
        if !out.iter().any(|h| h == &g) {
            out.push(g);
        }
    }
    out
}

/// `x ∈ conv(points)` by an LP feasibility problem.
pub(crate) fn in_convex_hull(points: &[DVector<f64>], x: &DVector<f64>, tol: f64) -> bool {
    if points.is_empty() {
        return false;
    }
    let n = x.len();
    let k = points.len();
    // min Σ (s+ + s-) s.t. Σ λ_i p_i + s+ - s- = x, Σ λ = 1.
    let mut lp = LinearProgram::minimize(
        (0..k + 2 * n)
            .map(|j| if j < k { 0.0 } else { 1.0 })
            .collect(),
    );
    for r in 0..n {
        let mut row = vec![0.0; k + 2 * n];
        for (i, p) in points.iter().enumerate() {
            row[i] = p[r];
        }
        row[k + r] = 1.0;
        row[k + n + r] = -1.0;
        lp.add_eq(row, x[r]);
    }
    let mut row = vec![0.0; k + 2 * n];
    row[..k].iter_mut().for_each(|v| *v = 1.0);
    lp.add_eq(row, 1.0);
    match lp.solve() {
        Ok(sol) => sol.status == LpStatus::Optimal && sol.objective <= tol.max(1e-12),
        Err(_) => false,
    }
}

/// Coordinate projection `π: R^d → R^n` keeping the listed indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub keep: Vec<usize>,
}

impl ProjectionSpec {
    pub fn new(keep: Vec<usize>, d: usize) -> Result<Self, SystemError> {
        if keep.is_empty() {
            return Err(SystemError::Projection("no coordinates kept".into()));
        }
        for (i, &k) in keep.iter().enumerate() {
            if k >= d {
                return Err(SystemError::Projection(format!(
                    "index {k} out of range for dimension {d}"
                )));
            }
            if keep[..i].contains(&k) {
                return Err(SystemError::Projection(format!("index {k} repeated")));
            }
        }
        Ok(ProjectionSpec { keep })
    }

    pub fn identity(d: usize) -> Self {
        ProjectionSpec {
            keep: (0..d).collect(),
        }
    }

    /// Drop the last coordinate (the angle of a product-form chart).
    pub fn drop_angle(d: usize) -> Self {
        ProjectionSpec {
            keep: (0..d.saturating_sub(1)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.keep.len()
    }

    pub fn matrix(&self, d: usize) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(self.keep.len(), d);
        for (r, &k) in self.keep.iter().enumerate() {
            p[(r, k)] = 1.0;
        }
        p
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.keep.len(), self.keep.iter().map(|&k| v[k]))
    }
}

/// Product-form data: the last coordinate is an angle and `X0 = ω(I) ∂/∂φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductForm {
    pub omega: Expr,
}

#[derive(Debug, Clone)]
pub struct SystemDef {
    pub name: String,
    coords: Arc<[String]>,
    pub drift: VectorField,
    pub controls: Vec<VectorField>,
    pub product_form: Option<ProductForm>,
    /// User-declared period of the drift, for non-product systems.
    pub period: Option<f64>,
    /// User assertion that the drift is Poisson stable.
    pub poisson_stable: bool,
}

impl SystemDef {
    pub fn new(
        name: impl Into<String>,
        drift: VectorField,
        controls: Vec<VectorField>,
    ) -> Result<Self, SystemError> {
        let coords = drift.coords().clone();
        if coords.is_empty() || controls.is_empty() {
            return Err(SystemError::Empty);
        }
        for (index, c) in controls.iter().enumerate() {
            if c.dim() != coords.len() {
                return Err(SystemError::FieldDimension {
                    index: index + 1,
                    expected: coords.len(),
                    found: c.dim(),
                });
            }
            if c.coords() != &coords {
                return Err(ExprError::ChartMismatch(coords.to_vec(), c.coords().to_vec()).into());
            }
        }
        Ok(SystemDef {
            name: name.into(),
            coords,
            drift,
            controls,
            product_form: None,
            period: None,
            poisson_stable: false,
        })
    }

    /// Product-form system on `O × S¹`; the angle must be the last coordinate.
    /// Periodic drifts are Poisson stable, so the assertion is set automatically.
    pub fn product(
        name: impl Into<String>,
        coords: Arc<[String]>,
        omega: Expr,
        controls: Vec<VectorField>,
    ) -> Result<Self, SystemError> {
        let d = coords.len();
        let mut comps = vec![Expr::zero(); d];
        if d > 0 {
            comps[d - 1] = omega.clone();
        }
        let drift = VectorField::new(coords, comps)?;
        let mut sys = SystemDef::new(name, drift, controls)?;
        sys.product_form = Some(ProductForm { omega });
        sys.poisson_stable = true;
        Ok(sys)
    }

    pub fn coords(&self) -> &Arc<[String]> {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn inputs(&self) -> usize {
        self.controls.len()
    }

    pub fn is_product(&self) -> bool {
        self.product_form.is_some()
    }

    /// Default projection: drop the angle for product-form systems, identity otherwise.
    pub fn default_projection(&self) -> ProjectionSpec {
        if self.is_product() {
            ProjectionSpec::drop_angle(self.dim())
        } else {
            ProjectionSpec::identity(self.dim())
        }
    }

    /// `X0 + Σ u_k X^k` as a single field.
    pub fn closed_loop(&self, u: &[f64]) -> Result<VectorField, ExprError> {
        let mut f = self.drift.clone();
        for (uk, xk) in u.iter().zip(&self.controls) {
            if *uk != 0.0 {
                f = f.add(&xk.scale(*uk))?;
            }
        }
        Ok(f)
    }

    /// `B(x)`: the d×m matrix whose columns are the control fields.
    pub fn control_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        let mut b = DMatrix::zeros(self.dim(), self.inputs());
        for (k, f) in self.controls.iter().enumerate() {
            b.set_column(k, &f.eval(x)?);
        }
        Ok(b)
    }
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    DimensionMismatch { controls: usize, set_dim: usize },
    ZeroNotInU,
    SpanDeficient { rank: usize, m: usize },
    GeneratorOutsideSet { index: usize },
    GeneratorOutsideRadius { index: usize, norm: f64, radius: f64 },
    ProductDriftShape { component: usize },
    OmegaDependsOnAngle,
    BadControlSet { reason: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DimensionMismatch { controls, set_dim } => write!(
                f,
                "system has {controls} control fields but U lives in R^{set_dim}"
            ),
            Diagnostic::ZeroNotInU => write!(f, "0 is not in U"),
            Diagnostic::SpanDeficient { rank, m } => write!(
                f,
                "U spans a subspace of dimension {rank} < {m}; rewrite the system with \
                 {rank} control fields adapted to span U"
            ),
            Diagnostic::GeneratorOutsideSet { index } => {
                write!(f, "generator {index} violates the set's defining inequalities")
            }
            Diagnostic::GeneratorOutsideRadius {
                index,
                norm,
                radius,
            } => write!(f, "generator {index} has norm {norm} > radius bound {radius}"),
            Diagnostic::ProductDriftShape { component } => write!(
                f,
                "product form requires drift component {component} to vanish identically"
            ),
            Diagnostic::OmegaDependsOnAngle => {
                write!(f, "product form requires omega to depend on I only")
            }
            Diagnostic::BadControlSet { reason } => write!(f, "control set: {reason}"),
        }
    }
}

/// Admissibility checks; an empty list means the pair is usable.
pub fn validate(sys: &SystemDef, u: &ControlSet) -> Vec<Diagnostic> {
    let mut out: Vec<Diagnostic> = u
        .shape_problems()
        .into_iter()
        .map(|reason| Diagnostic::BadControlSet { reason })
        .collect();
    if !out.is_empty() {
        return out;
    }
    if u.dim() != sys.inputs() {
        out.push(Diagnostic::DimensionMismatch {
            controls: sys.inputs(),
            set_dim: u.dim(),
        });
    }
    if !u.contains_origin() {
        out.push(Diagnostic::ZeroNotInU);
    }
    let gens = u.generators();
    let (rank, _) = span_rank(&gens, 1e-10);
    if rank < u.dim() {
        out.push(Diagnostic::SpanDeficient { rank, m: u.dim() });
    }
    let radius = u.radius();
    for (index, g) in gens.iter().enumerate() {
        if !u.contains(g.as_slice(), 1e-12) {
            out.push(Diagnostic::GeneratorOutsideSet { index });
        }
        let norm = g.norm();
        if norm > radius * (1.0 + 1e-12) + 1e-12 {
            out.push(Diagnostic::GeneratorOutsideRadius {
                index,
                norm,
                radius,
            });
        }
    }
    if let Some(pf) = &sys.product_form {
        let d = sys.dim();
        for (i, c) in sys.drift.components.iter().enumerate().take(d - 1) {
            if !c.is_zero() {
                out.push(Diagnostic::ProductDriftShape { component: i });
            }
        }
        if pf.omega.depends_on(d - 1) {
            out.push(Diagnostic::OmegaDependsOnAngle);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Scope;
    use proptest::prelude::*;

    fn heisenberg(u: &[&str]) -> SystemDef {
        let coords: Arc<[String]> = ["I1", "I2", "I3", "phi"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .into();
        let scope = Scope {
            coords: &coords,
            params: None,
        };
        let x1 = VectorField::parse(u, &scope).unwrap();
        SystemDef::product("rotating_input", coords.clone(), Expr::one(), vec![x1]).unwrap()
    }

    fn rotating_input() -> SystemDef {
        heisenberg(&[
            "cos(phi)",
            "sin(phi)",
            "-I2/2*cos(phi) + I1/2*sin(phi)",
            "0",
        ])
    }

    #[test]
    fn heisenberg_with_unit_interval_is_admissible() {
        assert!(validate(&rotating_input(), &ControlSet::interval(0.0, 1.0)).is_empty());
    }

    #[test]
    fn degenerate_polytope_fails_span() {
        let coords: Arc<[String]> = vec!["x".to_string(), "y".to_string()].into();
        let scope = Scope {
            coords: &coords,
            params: None,
        };
        let sys = SystemDef::new(
            "plane",
            VectorField::zero(coords.clone()),
            vec![
                VectorField::parse(&["1", "0"], &scope).unwrap(),
                VectorField::parse(&["0", "1"], &scope).unwrap(),
            ],
        )
        .unwrap();
        let u = ControlSet::Polytope {
            vertices: vec![vec![1.0, 0.0]],
        };
        let diags = validate(&sys, &u);
        assert!(diags.contains(&Diagnostic::SpanDeficient { rank: 1, m: 2 }), "{diags:?}");
    }

    #[test]
    fn interval_away_from_zero_is_rejected() {
        let diags = validate(&rotating_input(), &ControlSet::interval(0.5, 1.0));
        assert_eq!(diags, vec![Diagnostic::ZeroNotInU]);
    }

    #[test]
    fn product_drift_must_be_angular() {
        let mut sys = rotating_input();
        sys.drift.components[0] = Expr::one();
        let diags = validate(&sys, &ControlSet::interval(0.0, 1.0));
        assert_eq!(diags, vec![Diagnostic::ProductDriftShape { component: 0 }]);
    }

    #[test]
    fn generator_examples() {
        assert_eq!(ControlSet::cube(2, -1.0, 1.0).generators().len(), 4);
        let g = ControlSet::interval(0.0, 1.0).generators();
        assert_eq!(g, vec![DVector::from_element(1, 0.0), DVector::from_element(1, 1.0)]);
        let sector = ControlSet::DiskSector {
            alpha: 0.5,
            radius: 1.0,
            generator_count: 9,
        };
        let g = sector.generators();
        let arc: Vec<_> = g.iter().filter(|v| v.norm() > 0.5).collect();
        assert_eq!(arc.len(), 9);
        let angles: Vec<f64> = arc.iter().map(|v| v[1].atan2(v[0])).collect();
        assert!((angles[0] + 0.5).abs() < 1e-15 && (angles[8] - 0.5).abs() < 1e-15);
        for v in &g {
            assert!(v[1].abs() <= v[0] * 0.5f64.tan() + 1e-12);
            assert!(v.norm() <= 1.0 + 1e-12);
        }
        assert!(g.iter().any(|v| v.norm() == 0.0));
    }

    #[test]
    fn support_examples() {
        assert_eq!(ControlSet::cube(2, -1.0, 1.0).support(&[1.0, 1.0]), 2.0);
        assert_eq!(ControlSet::interval(0.0, 1.0).support(&[-1.0]), 0.0);
        let s = ControlSet::disk_sector(PI / 4.0).support(&[0.0, 1.0]);
        assert!((s - (PI / 4.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn scale_examples() {
        assert_eq!(
            ControlSet::interval(0.0, 1.0).scale(0.5).unwrap(),
            ControlSet::interval(0.0, 0.5)
        );
        match ControlSet::disk_sector(0.3).scale(0.25).unwrap() {
            ControlSet::DiskSector { alpha, radius, .. } => {
                assert_eq!(alpha, 0.3);
                assert_eq!(radius, 0.25);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ControlSet::interval(0.0, 1.0).scale(0.0),
            Err(SystemError::NonPositiveScale(_))
        ));
    }

    #[test]
    fn projection_validation() {
        assert!(ProjectionSpec::new(vec![0, 0], 3).is_err());
        assert!(ProjectionSpec::new(vec![3], 3).is_err());
        let p = ProjectionSpec::new(vec![2, 0], 3).unwrap();
        let v = p.apply(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        assert_eq!(v.as_slice(), &[3.0, 1.0]);
        assert_eq!(p.matrix(3) * DVector::from_vec(vec![1.0, 2.0, 3.0]), v);
    }

    fn sets() -> Vec<ControlSet> {
        vec![
            ControlSet::cube(2, -1.0, 1.0),
            ControlSet::Box {
                lo: vec![0.0, -0.5],
                hi: vec![2.0, 1.0],
            },
            ControlSet::disk_sector(0.5),
            ControlSet::DiskSector {
                alpha: 1.2,
                radius: 2.0,
                generator_count: 17,
            },
            ControlSet::Polytope {
                vertices: vec![vec![0.0, 0.0], vec![1.0, 0.2], vec![-0.3, 0.9]],
            },
            ControlSet::Product {
                factors: vec![ControlSet::interval(0.0, 1.0), ControlSet::interval(-2.0, 1.0)],
            },
            ControlSet::Scaled {
                eps: 0.3,
                inner: std::boxed::Box::new(ControlSet::disk_sector(0.7)),
            },
        ]
    }

    #[test]
    fn generators_satisfy_their_inequalities() {
        for u in sets() {
            for g in u.generators() {
                assert!(u.contains(g.as_slice(), 1e-12), "{u:?}: {g}");
            }
        }
    }

    #[test]
    fn origin_in_hull_of_generators() {
        for u in sets() {
            assert!(u.contains_origin());
            assert!(in_convex_hull(&u.generators(), &DVector::zeros(2), 1e-10), "{u:?}");
        }
    }

    proptest! {
        #[test]
        fn support_dominates_generators(a in -1.0f64..1.0, b in -1.0f64..1.0) {
            for u in sets() {
                let h = u.support(&[a, b]);
                for g in u.generators() {
                    prop_assert!(a * g[0] + b * g[1] <= h + 1e-12);
                }
            }
        }

        #[test]
        fn support_is_positively_homogeneous_in_scale(a in -1.0f64..1.0, b in -1.0f64..1.0, eps in 0.01f64..3.0) {
            for u in sets() {
                let scaled = u.scale(eps).unwrap();
                let lhs = scaled.support(&[a, b]);
                let rhs = eps * u.support(&[a, b]);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}

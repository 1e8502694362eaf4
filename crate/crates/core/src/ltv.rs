//! Time-varying linear systems `ż = A(t) z + B(t) v`, `v ∈ V`, with
//! constrained controls: cone criteria for the accessible set from the origin,
//! the Silverman–Meadows rank test, and the exact support function of the
//! (convex) accessible set as an independent oracle.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::cone::{cone_full, span_rank, ConeError, ConeVerdict, RANK_TOL};
use crate::expr::{parse_expr, Expr, ExprError, ExprMatrix, VectorField};
use crate::ode::{self, OdeError, OdeOptions};
use crate::system::{ControlSet, ProjectionSpec, SystemDef};

pub const ETA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LtvError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("cannot drop coordinate {coord}: it is coupled to the kept ones")]
    Coupled { coord: usize },
    #[error("reference control has {found} entries, system has {expected} inputs")]
    Reference { expected: usize, found: usize },
}

#[derive(Debug, Clone)]
enum Model {
    /// Entries are expressions in the single variable `t`.
    Explicit { a: ExprMatrix, b: ExprMatrix },
    /// Linearization of `F = X0 + Σ u_ref,k X^k` along its solution from `x0`;
    /// entries are expressions in the full state, restricted to `keep`.
    Linearized {
        field: VectorField,
        jac: ExprMatrix,
        b: ExprMatrix,
        keep: Vec<usize>,
        x0: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct LtvSystem {
    model: Model,
    pub v: ControlSet,
    pub t0: f64,
    pub tf: f64,
    pub opts: OdeOptions,
}

/// Which generator family decides the cone test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConeMode {
    /// `cone{φ(t0, s) B(s) v} = R^d`.
    AtStart,
    /// `cone{P φ(tf, s) B(s) v} = R^n`.
    ProjectedAtEnd(ProjectionSpec),
}

struct GridPoint {
    /// `φ(t0, s)`.
    back: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LtvSystem {
    /// `A`, `B` given as expression strings in `t`, row by row.
    pub fn explicit(
        a: &[Vec<&str>],
        b: &[Vec<&str>],
        v: ControlSet,
        t0: f64,
        tf: f64,
    ) -> Result<Self, LtvError> {
        let chart = vec!["t".to_string()];
        let parse = |rows: &[Vec<&str>]| -> Result<ExprMatrix, LtvError> {
            let r = rows.len();
            let c = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|row| row.len() != c) {
                return Err(LtvError::Dimension("ragged matrix".into()));
            }
            let mut parsed = Vec::with_capacity(r * c);
            for row in rows {
                for src in row {
                    parsed.push(parse_expr(src, &chart)?);
                }
            }
            Ok(ExprMatrix::from_fn(r, c, |i, j| parsed[i * c + j].clone()))
        };
        let a = parse(a)?;
        let b = parse(b)?;
        Self::from_matrices(a, b, v, t0, tf)
    }

    pub fn from_matrices(
        a: ExprMatrix,
        b: ExprMatrix,
        v: ControlSet,
        t0: f64,
        tf: f64,
    ) -> Result<Self, LtvError> {
        if a.rows != a.cols || b.rows != a.rows {
            return Err(LtvError::Dimension(format!(
                "A is {}x{}, B is {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        if b.cols != v.dim() {
            return Err(LtvError::Dimension(format!(
                "B has {} columns, V lives in R^{}",
                b.cols,
                v.dim()
            )));
        }
        Ok(LtvSystem {
            model: Model::Explicit { a, b },
            v,
            t0,
            tf,
            opts: OdeOptions::default(),
        })
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            Model::Explicit { a, .. } => a.rows,
            Model::Linearized { keep, .. } => keep.len(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.v.dim()
    }

    /// Restrict to the coordinates in `keep`. Allowed only when the dropped
    /// coordinates are symbolically decoupled: their rows of `A` vanish on the
    /// kept columns and their rows of `B` vanish, so `z_dropped ≡ 0` is invariant.
    pub fn reduce(&self, keep: &[usize]) -> Result<LtvSystem, LtvError> {
        let n = self.dim();
        if keep.iter().any(|&k| k >= n) {
            return Err(LtvError::Dimension(format!("keep {keep:?} for dimension {n}")));
        }
        let (a, b, cur) = match &self.model {
            Model::Explicit { a, b } => (a, b, (0..n).collect::<Vec<_>>()),
            Model::Linearized { jac, b, keep, .. } => (jac, b, keep.clone()),
        };
        let new_keep: Vec<usize> = keep.iter().map(|&k| cur[k]).collect();
        for &r in &cur {
            if new_keep.contains(&r) {
                continue;
            }
            let coupled = new_keep.iter().any(|&c| !a.get(r, c).is_zero())
                || (0..b.cols).any(|j| !b.get(r, j).is_zero());
            if coupled {
                return Err(LtvError::Coupled { coord: r });
            }
        }
        let model = match &self.model {
            Model::Explicit { a, b } => Model::Explicit {
                a: a.select(keep, keep),
                b: b.select(keep, &(0..b.cols).collect::<Vec<_>>()),
            },
            Model::Linearized {
                field, jac, b, x0, ..
            } => Model::Linearized {
                field: field.clone(),
                jac: jac.clone(),
                b: b.clone(),
                keep: new_keep,
                x0: x0.clone(),
            },
        };
        Ok(LtvSystem {
            model,
            v: self.v.clone(),
            t0: self.t0,
            tf: self.tf,
            opts: self.opts,
        })
    }

    /// Drop the last coordinate (the angle of a product chart).
    pub fn reduce_angle(&self) -> Result<LtvSystem, LtvError> {
        let n = self.dim();
        self.reduce(&(0..n.saturating_sub(1)).collect::<Vec<_>>())
    }

    fn kept_a(&self) -> ExprMatrix {
        match &self.model {
            Model::Explicit { a, .. } => a.clone(),
            Model::Linearized { jac, keep, .. } => jac.select(keep, keep),
        }
    }

    fn kept_b(&self) -> ExprMatrix {
        match &self.model {
            Model::Explicit { b, .. } => b.clone(),
            Model::Linearized { b, keep, .. } => b.select(keep, &(0..b.cols).collect::<Vec<_>>()),
        }
    }

    /// Reference state at `t` (for linearized models), or `[t]` for explicit ones.
    fn eval_point(&self, t: f64) -> Result<Vec<f64>, LtvError> {
        match &self.model {
            Model::Explicit { .. } => Ok(vec![t]),
            Model::Linearized { field, x0, .. } => {
                let sol = ode::solve(
                    |_t, y, dy| Ok(field.eval_into(y, dy)?),
                    self.t0,
                    x0,
                    t,
                    self.opts,
                )?;
                Ok(sol.final_state().to_vec())
            }
        }
    }

    pub fn a_at(&self, t: f64) -> Result<DMatrix<f64>, LtvError> {
        Ok(self.kept_a().eval(&self.eval_point(t)?)?)
    }

    pub fn b_at(&self, t: f64) -> Result<DMatrix<f64>, LtvError> {
        Ok(self.kept_b().eval(&self.eval_point(t)?)?)
    }

    /// `φ(t0, s)` and `B(s)` on a uniform grid over `[t0, tf]`.
    fn grid(&self, steps: usize) -> Result<Vec<GridPoint>, LtvError> {
        let n = self.dim();
        let a_m = self.kept_a();
        let b_m = self.kept_b();
        let times = crate::flow::uniform_grid(self.t0, self.tf, steps.max(1));
        let (offset, y0) = match &self.model {
            Model::Explicit { .. } => (0, Vec::new()),
            Model::Linearized { x0, .. } => (x0.len(), x0.clone()),
        };
        let mut y0 = y0;
        y0.extend(DMatrix::<f64>::identity(n, n).as_slice());
        let field = match &self.model {
            Model::Linearized { field, .. } => Some(field),
            Model::Explicit { .. } => None,
        };
        let mut a = DMatrix::zeros(n, n);
        let mut point = vec![0.0; offset.max(1)];
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), OdeError> {
            match field {
                Some(f) => {
                    f.eval_into(&y[..offset], &mut dy[..offset])?;
                    point.copy_from_slice(&y[..offset]);
                }
                None => point[0] = t,
            }
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = a_m.get(i, j).eval(&point)?;
                }
            }
            let psi = DMatrix::from_column_slice(n, n, &y[offset..]);
            let out = -(psi * &a);
            dy[offset..].copy_from_slice(out.as_slice());
            Ok(())
        };
        let ys = ode::solve_at(rhs, self.t0, &y0, &times, self.opts)?;
        times
            .iter()
            .zip(ys)
            .map(|(&s, y)| {
                let p: Vec<f64> = if field.is_some() {
                    y[..offset].to_vec()
                } else {
                    vec![s]
                };
                Ok(GridPoint {
                    back: DMatrix::from_column_slice(n, n, &y[offset..]),
                    b: b_m.eval(&p)?,
                })
            })
            .collect()
    }

    /// Per grid point, the matrix whose image of `V` the cone test uses.
    fn cone_maps(&self, mode: &ConeMode, steps: usize) -> Result<Vec<DMatrix<f64>>, LtvError> {
        let grid = self.grid(steps)?;
        let front = match mode {
            ConeMode::AtStart => DMatrix::identity(self.dim(), self.dim()),
            ConeMode::ProjectedAtEnd(p) => {
                let last = grid.last().expect("grid is nonempty");
                p.matrix(self.dim())
                    * last
                        .back
                        .clone()
                        .try_inverse()
                        .expect("transition matrices are invertible")
            }
        };
        Ok(grid.iter().map(|g| &front * &g.back * &g.b).collect())
    }

    pub fn cone_generators(&self, mode: &ConeMode, steps: usize) -> Result<Vec<DVector<f64>>, LtvError> {
        let gens = self.v.generators();
        let maps = self.cone_maps(mode, steps)?;
        Ok(maps
            .iter()
            .flat_map(|m| gens.iter().map(move |g| m * g))
            .collect())
    }

    pub fn cone_condition(&self, mode: &ConeMode, steps: usize) -> Result<ConeVerdict, LtvError> {
        Ok(cone_full(&self.cone_generators(mode, steps)?)?)
    }

    /// Columns of `[C_0, ..., C_depth]` with `C_0 = B`, `C_{k+1} = (d/dt - A) C_k`.
    pub fn silverman_meadows_matrix(&self, t: f64, depth: usize) -> Result<DMatrix<f64>, LtvError> {
        let a = self.kept_a();
        let mut c = self.kept_b();
        let n = self.dim();
        let m = c.cols;
        let ddt = |e: &Expr| -> Expr {
            match &self.model {
                Model::Explicit { .. } => e.diff(0),
                Model::Linearized { field, .. } => field.lie_derivative(e),
            }
        };
        let point = self.eval_point(t)?;
        let mut out = DMatrix::zeros(n, m * (depth + 1));
        for k in 0..=depth {
            let val = c.eval(&point)?;
            out.view_mut((0, k * m), (n, m)).copy_from(&val);
            if k < depth {
                let d = c.map(&ddt);
                c = d.sub(&a.mul(&c));
            }
        }
        Ok(out)
    }

    /// Rank of the Silverman–Meadows matrix at `t`.
    pub fn silverman_meadows(&self, t: f64, depth: usize) -> Result<usize, LtvError> {
        let mat = self.silverman_meadows_matrix(t, depth)?;
        let cols: Vec<DVector<f64>> = mat.column_iter().map(|c| c.into_owned()).collect();
        Ok(span_rank(&cols, RANK_TOL).0)
    }

    /// Quadrature data for the support function of the accessible set.
    pub fn support_oracle(
        &self,
        steps: usize,
        proj: Option<&ProjectionSpec>,
    ) -> Result<SupportOracle, LtvError> {
        let steps = (steps.max(2) + 1) / 2 * 2;
        let grid = self.grid(steps)?;
        let last = grid.last().expect("grid is nonempty");
        let fwd = last
            .back
            .clone()
            .try_inverse()
            .expect("transition matrices are invertible");
        let front = match proj {
            Some(p) => p.matrix(self.dim()) * fwd,
            None => fwd,
        };
        let h = (self.tf - self.t0) / steps as f64;
        let maps: Vec<DMatrix<f64>> = grid
            .iter()
            .map(|g| (&front * &g.back * &g.b).transpose())
            .collect();
        let weights = (0..=steps)
            .map(|j| {
                let w = if j == 0 || j == steps {
                    1.0
                } else if j % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                w * h / 3.0
            })
            .collect();
        Ok(SupportOracle {
            v: self.v.clone(),
            maps,
            weights,
        })
    }

    /// `h(p) = ∫ h_V(B(s)ᵀ φ(tf, s)ᵀ p) ds` for `z0 = 0`.
    pub fn reach_support(&self, p: &[f64], steps: usize) -> Result<f64, LtvError> {
        Ok(self.support_oracle(steps, None)?.support(p))
    }

    /// Whether `0` is interior to the accessible set, by minimizing the support
    /// function over sampled unit directions.
    pub fn zero_interior(
        &self,
        directions: usize,
        proj: Option<&ProjectionSpec>,
        steps: usize,
    ) -> Result<ZeroInterior, LtvError> {
        let oracle = self.support_oracle(steps, proj)?;
        let n = proj.map_or(self.dim(), ProjectionSpec::dim);
        Ok(oracle.min_over_sphere(n, directions))
    }
}

/// `h(p) = Σ_j w_j h_V(W_j p)` with `W_j = (P φ(tf, s_j) B(s_j))ᵀ`.
#[derive(Debug, Clone)]
pub struct SupportOracle {
    v: ControlSet,
    maps: Vec<DMatrix<f64>>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroInterior {
    pub interior: bool,
    pub min_support: f64,
    pub argmin: Vec<f64>,
}

impl SupportOracle {
    pub fn support(&self, p: &[f64]) -> f64 {
        let p = DVector::from_column_slice(p);
        self.maps
            .iter()
            .zip(&self.weights)
            .map(|(w, c)| c * self.v.support((w * &p).as_slice()))
            .sum()
    }

    fn support_unit(&self, p: &DVector<f64>) -> f64 {
        let n = p.norm();
        self.support((p / n).as_slice())
    }

    pub fn min_over_sphere(&self, n: usize, directions: usize) -> ZeroInterior {
        let mut cands = sphere_points(n, directions);
        for i in 0..n {
            for s in [1.0, -1.0] {
                let mut e = DVector::zeros(n);
                e[i] = s;
                cands.push(e);
            }
        }
        let mut scored: Vec<(f64, DVector<f64>)> = cands
            .into_par_iter()
            .map(|p| (self.support_unit(&p), p))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let refined: Vec<(f64, DVector<f64>)> = scored
            .into_iter()
            .take(8)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(h, p)| self.pattern_search(h, p))
            .collect();
        let (best, p) = refined
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one direction");
        ZeroInterior {
            interior: best > ETA,
            min_support: best,
            argmin: p.as_slice().to_vec(),
        }
    }

    /// Coordinate pattern search on the sphere with shrinking steps.
    fn pattern_search(&self, mut h: f64, mut p: DVector<f64>) -> (f64, DVector<f64>) {
        let n = p.len();
        let mut step = 0.25;
        while step > 1e-10 && h > 0.0 {
            let mut improved = false;
            for i in 0..n {
                for s in [step, -step] {
                    let mut q = p.clone();
                    q[i] += s;
                    let q = &q / q.norm();
                    let hq = self.support_unit(&q);
                    if hq < h {
                        h = hq;
                        p = q;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        (h, p)
    }
}

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Low-discrepancy directions on the unit sphere in `R^n`: Halton points
/// pushed through the normal quantile and normalized (circle points for `n = 2`).
pub fn sphere_points(n: usize, count: usize) -> Vec<DVector<f64>> {
    if n == 1 {
        return vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)];
    }
    if n == 2 {
        return (0..count)
            .map(|j| {
                let a = 2.0 * PI * (j as f64 + 0.5) / count as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    let normal = Normal::standard();
    (1..=count)
        .filter_map(|i| {
            let v = DVector::from_iterator(
                n,
                (0..n).map(|k| normal.inverse_cdf(radical_inverse(i, PRIMES[k % PRIMES.len()]))),
            );
            let norm = v.norm();
            (norm > 1e-12 && norm.is_finite()).then(|| v / norm)
        })
        .collect()
}

/// Linearize `ẋ = X0 + Σ u_k X^k` around the solution of the reference field
/// `X0 + Σ u_ref,k X^k` started at `x0` at time `t0`; variations take values in `v`.
pub fn linearize(
    sys: &SystemDef,
    x0: &[f64],
    t0: f64,
    tf: f64,
    reference: Option<&[f64]>,
    v: ControlSet,
) -> Result<LtvSystem, LtvError> {
    if x0.len() != sys.dim() {
        return Err(LtvError::Dimension(format!(
            "point of dimension {}, system of dimension {}",
            x0.len(),
            sys.dim()
        )));
    }
    if v.dim() != sys.inputs() {
        return Err(LtvError::Dimension(format!(
            "V lives in R^{}, system has {} inputs",
            v.dim(),
            sys.inputs()
        )));
    }
    let field = match reference {
        Some(u) => {
            if u.len() != sys.inputs() {
                return Err(LtvError::Reference {
                    expected: sys.inputs(),
                    found: u.len(),
                });
            }
            sys.closed_loop(u)?
        }
        None => sys.drift.clone(),
    };
    let jac = field.jacobian();
    let b = ExprMatrix::from_columns(&sys.controls);
    Ok(LtvSystem {
        model: Model::Linearized {
            field,
            jac,
            b,
            keep: (0..sys.dim()).collect(),
            x0: x0.to_vec(),
        },
        v,
        t0,
        tf,
        opts: OdeOptions::default(),
    })
}

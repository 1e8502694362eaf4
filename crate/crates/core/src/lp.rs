//! Dense two-phase simplex for small linear programs.
//!
//! Problems have the form `min/max cᵀx` subject to `A_eq x = b_eq`,
//! `A_le x ≤ b_le` and per-variable bounds (default `[0, ∞)`). Pivoting uses
//! Dantzig's rule and falls back to Bland's rule after a run of degenerate
//! pivots, so the method cannot cycle. Every row carries an artificial column
//! for the whole solve, which keeps `B⁻¹` readable and gives the duals for free.

use thiserror::Error;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const RESIDUAL_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("bounds lo={lo} hi={hi} on variable {var} are empty")]
    EmptyBounds { var: usize, lo: f64, hi: f64 },
    #[error("optimal basis failed the residual check ({residual:e})")]
    Residual { residual: f64 },
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
}

impl Bound {
    pub const NONNEG: Bound = Bound {
        lo: 0.0,
        hi: f64::INFINITY,
    };
    pub const FREE: Bound = Bound {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Bound { lo, hi }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimizer in the caller's variables; empty unless optimal.
    pub x: Vec<f64>,
    /// Optimal value; `NaN` when infeasible, `±∞` when unbounded.
    pub objective: f64,
    /// `∂ objective / ∂ b` for each equality row.
    pub duals_eq: Vec<f64>,
    /// `∂ objective / ∂ b` for each inequality row.
    pub duals_le: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    maximize: bool,
    c: Vec<f64>,
    eq: Vec<(Vec<f64>, f64)>,
    le: Vec<(Vec<f64>, f64)>,
    bounds: Vec<Bound>,
}

impl LinearProgram {
    pub fn minimize(c: Vec<f64>) -> Self {
        let n = c.len();
        LinearProgram {
            maximize: false,
            c,
            eq: Vec::new(),
            le: Vec::new(),
            bounds: vec![Bound::NONNEG; n],
        }
    }

    pub fn maximize(c: Vec<f64>) -> Self {
        LinearProgram {
            maximize: true,
            ..Self::minimize(c)
        }
    }

    pub fn vars(&self) -> usize {
        self.c.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.eq.push((row, rhs));
        self
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.le.push((row, rhs));
        self
    }

    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) -> &mut Self {
        self.le.push((row.into_iter().map(|v| -v).collect(), -rhs));
        self
    }

    pub fn set_bound(&mut self, var: usize, bound: Bound) -> &mut Self {
        self.bounds[var] = bound;
        self
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let n = self.vars();
        for (i, (row, _)) in self.eq.iter().chain(&self.le).enumerate() {
            if row.len() != n {
                return Err(LpError::Dimension(format!(
                    "constraint {i} has {} coefficients, expected {n}",
                    row.len()
                )));
            }
        }
        for (var, b) in self.bounds.iter().enumerate() {
            if b.lo > b.hi || b.lo == f64::INFINITY || b.hi == f64::NEG_INFINITY {
                return Err(LpError::EmptyBounds {
                    var,
                    lo: b.lo,
                    hi: b.hi,
                });
            }
        }

        // Substitute x_j = offset_j + Σ sign * x'_k with x' ≥ 0.
        let mut columns: Vec<(usize, f64)> = Vec::new();
        let mut offset = vec![0.0; n];
        let mut extra_le: Vec<(usize, f64)> = Vec::new();
        for (j, b) in self.bounds.iter().enumerate() {
            if b.lo.is_finite() {
                offset[j] = b.lo;
                if b.hi.is_finite() {
                    extra_le.push((columns.len(), b.hi - b.lo));
                }
                columns.push((j, 1.0));
            } else if b.hi.is_finite() {
                offset[j] = b.hi;
                columns.push((j, -1.0));
            } else {
                columns.push((j, 1.0));
                columns.push((j, -1.0));
            }
        }
        let sgn = if self.maximize { -1.0 } else { 1.0 };
        let cost: Vec<f64> = columns.iter().map(|&(j, s)| sgn * self.c[j] * s).collect();

        let transform = |row: &[f64], rhs: f64| -> (Vec<f64>, f64) {
            let r: Vec<f64> = columns.iter().map(|&(j, s)| row[j] * s).collect();
            let shift: f64 = row.iter().zip(&offset).map(|(a, o)| a * o).sum();
            (r, rhs - shift)
        };
        let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
        for (row, rhs) in &self.eq {
            let (r, b) = transform(row, *rhs);
            rows.push((r, b, false));
        }
        for (row, rhs) in &self.le {
            let (r, b) = transform(row, *rhs);
            rows.push((r, b, true));
        }
        for &(k, ub) in &extra_le {
            let mut r = vec![0.0; columns.len()];
            r[k] = 1.0;
            rows.push((r, ub, true));
        }

        let mut tab = Tableau::build(&rows, &cost);
        let outcome = tab.run()?;
        let m_eq = self.eq.len();
        let m_le = self.le.len();
        match outcome {
            LpStatus::Infeasible => Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: Vec::new(),
                objective: f64::NAN,
                duals_eq: Vec::new(),
                duals_le: Vec::new(),
            }),
            LpStatus::Unbounded => Ok(LpSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: if self.maximize {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                duals_eq: Vec::new(),
                duals_le: Vec::new(),
            }),
            LpStatus::Optimal => {
                let xp = tab.primal();
                let mut x = offset.clone();
                for (k, &(j, s)) in columns.iter().enumerate() {
                    x[j] += s * xp[k];
                }
                let residual = self.residual(&x);
                let scale = 1.0
                    + self
                        .eq
                        .iter()
                        .chain(&self.le)
                        .map(|(_, b)| b.abs())
                        .fold(0.0, f64::max);
                if residual > RESIDUAL_TOL * scale {
                    return Err(LpError::Residual { residual });
                }
                let y = tab.duals();
                let objective: f64 = self.c.iter().zip(&x).map(|(c, x)| c * x).sum();
                Ok(LpSolution {
                    status: LpStatus::Optimal,
                    x,
                    objective,
                    duals_eq: y[..m_eq].iter().map(|v| sgn * v).collect(),
                    duals_le: y[m_eq..m_eq + m_le].iter().map(|v| sgn * v).collect(),
                })
            }
        }
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let dot = |r: &[f64]| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let mut worst: f64 = 0.0;
        for (r, b) in &self.eq {
            worst = worst.max((dot(r) - b).abs());
        }
        for (r, b) in &self.le {
            worst = worst.max(dot(r) - b);
        }
        for (v, b) in x.iter().zip(&self.bounds) {
            worst = worst.max(b.lo - v).max(v - b.hi);
        }
        worst
    }
}

/// Functional form: bounds default to `[0, ∞)` when `None`.
#[allow(clippy::too_many_arguments)]
pub fn lp_solve(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ineq: &[Vec<f64>],
    b_ineq: &[f64],
    bounds: Option<&[Bound]>,
    maximize: bool,
) -> Result<LpSolution, LpError> {
    if a_eq.len() != b_eq.len() || a_ineq.len() != b_ineq.len() {
        return Err(LpError::Dimension("row count differs from rhs length".into()));
    }
    let mut lp = if maximize {
        LinearProgram::maximize(c.to_vec())
    } else {
        LinearProgram::minimize(c.to_vec())
    };
    for (r, b) in a_eq.iter().zip(b_eq) {
        lp.add_eq(r.clone(), *b);
    }
    for (r, b) in a_ineq.iter().zip(b_ineq) {
        lp.add_le(r.clone(), *b);
    }
    if let Some(bs) = bounds {
        if bs.len() != c.len() {
            return Err(LpError::Dimension(format!(
                "{} bounds for {} variables",
                bs.len(),
                c.len()
            )));
        }
        for (j, b) in bs.iter().enumerate() {
            lp.set_bound(j, *b);
        }
    }
    lp.solve()
}

/// Columns: structural, slack, artificial, then the right-hand side.
struct Tableau {
    m: usize,
    n_struct: usize,
    n_slack: usize,
    width: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    flipped: Vec<bool>,
    cost: Vec<f64>,
}

impl Tableau {
    fn build(rows: &[(Vec<f64>, f64, bool)], cost: &[f64]) -> Self {
        let m = rows.len();
        let n_struct = cost.len();
        let n_slack = rows.iter().filter(|r| r.2).count();
        let width = n_struct + n_slack + m + 1;
        let mut t = vec![0.0; m * width];
        let mut flipped = vec![false; m];
        let mut slack = n_struct;
        for (i, (r, b, le)) in rows.iter().enumerate() {
            let row = &mut t[i * width..(i + 1) * width];
            let s = if *b < 0.0 { -1.0 } else { 1.0 };
            flipped[i] = s < 0.0;
            for (j, a) in r.iter().enumerate() {
                row[j] = s * a;
            }
            if *le {
                row[slack] = s;
                slack += 1;
            }
            row[n_struct + n_slack + i] = 1.0;
            row[width - 1] = s * b;
        }
        let mut full_cost = cost.to_vec();
        full_cost.resize(width - 1, 0.0);
        Tableau {
            m,
            n_struct,
            n_slack,
            width,
            t,
            obj: vec![0.0; width],
            basis: (0..m).map(|i| n_struct + n_slack + i).collect(),
            flipped,
            cost: full_cost,
        }
    }

    fn art0(&self) -> usize {
        self.n_struct + self.n_slack
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.width - 1)
    }

    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..w - 1].copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (o, a) in self.obj.iter_mut().zip(row) {
                    *o -= cb * a;
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width;
        let p = self.t[r * w + q];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_mut(w).chain(after.chunks_mut(w)) {
            let f = row[q];
            if f != 0.0 {
                for (a, b) in row.iter_mut().zip(prow.iter()) {
                    *a -= f * b;
                }
                row[q] = 0.0;
            }
        }
        let f = self.obj[q];
        if f != 0.0 {
            for (a, b) in self.obj.iter_mut().zip(prow.iter()) {
                *a -= f * b;
            }
            self.obj[q] = 0.0;
        }
        self.basis[r] = q;
    }

    /// Optimize over columns `< limit`. Returns false when unbounded.
    fn optimize(&mut self, limit: usize) -> Result<bool, LpError> {
        let max_iter = 50 * (self.width + self.m) + 1000;
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut q = None;
            let mut best = -COST_TOL;
            for j in 0..limit {
                let r = self.obj[j];
                if r < best {
                    q = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(q) = q else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(i).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            if ratio < best - 1e-14
                                || (ratio <= best + 1e-14 && self.basis[i] < self.basis[k])
                            {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Ok(false);
            };
            if ratio <= 1e-14 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, q);
        }
        Err(LpError::IterationLimit(max_iter))
    }

    fn run(&mut self) -> Result<LpStatus, LpError> {
        let art0 = self.art0();
        let total = self.width - 1;
        let phase1: Vec<f64> = (0..total).map(|j| if j >= art0 { 1.0 } else { 0.0 }).collect();
        self.price(&phase1);
        self.optimize(total)?;
        let infeas: f64 = (0..self.m)
            .filter(|&i| self.basis[i] >= art0)
            .map(|i| self.rhs(i))
            .sum();
        let bscale = 1.0 + (0..self.m).map(|i| self.rhs(i).abs()).fold(0.0, f64::max);
        if infeas > FEAS_TOL * bscale {
            return Ok(LpStatus::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for i in 0..self.m {
            if self.basis[i] >= art0 {
                if let Some(q) = (0..art0).find(|&j| self.at(i, j).abs() > 1e-9) {
                    self.pivot(i, q);
                }
            }
        }
        let cost = self.cost.clone();
        self.price(&cost);
        if self.optimize(art0)? {
            Ok(LpStatus::Optimal)
        } else {
            Ok(LpStatus::Unbounded)
        }
    }

    fn primal(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_struct];
        for i in 0..self.m {
            if self.basis[i] < self.n_struct {
                x[self.basis[i]] = self.rhs(i).max(0.0);
            }
        }
        x
    }

    /// Duals of the transformed rows, in original sign convention.
    fn duals(&self) -> Vec<f64> {
        let art0 = self.art0();
        (0..self.m)
            .map(|i| {
                let y = -self.obj[art0 + i];
                if self.flipped[i] {
                    -y
                } else {
                    y
                }
            })
            .collect()
    }
}

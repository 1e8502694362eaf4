//! Drift flows, transition matrices and the transported control directions
//! `E^U_τ(x) = { Σ u_k (exp(-τ X0)_* X^k)(x) : u ∈ U }`.
//!
//! Pushforwards are computed with `Ψ(τ) = φ(0, τ)`, the inverse transition
//! matrix of the drift linearization, which solves `Ψ' = -Ψ A(x̄(τ))` with
//! `Ψ(0) = I`. Then `(exp(-τX0)_* X^k)(x) = Ψ(τ) X^k(x̄(τ))`.

use std::f64::consts::PI;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{ExprError, ExprMatrix};
use crate::ode::{self, DenseSolution, OdeError, OdeOptions};
use crate::system::{ControlSet, ProjectionSpec, SystemDef};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("point has dimension {found}, system has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("omega vanishes at the query point; the orbit is an equilibrium, not periodic")]
    ZeroFrequency,
    #[error("system is not in product form and declares no period")]
    NoPeriod,
    #[error("time {t} lies outside the trajectory span [{lo}, {hi}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },
    #[error("control index {index} out of range (m = {m})")]
    ControlIndex { index: usize, m: usize },
    #[error("invalid control schedule: {0}")]
    Schedule(String),
}

fn check_dim(sys: &SystemDef, x: &[f64]) -> Result<(), FlowError> {
    if x.len() != sys.dim() {
        return Err(FlowError::Dimension {
            expected: sys.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Solution of `ẋ = X0(x)` with dense output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    sol: DenseSolution,
}

impl Trajectory {
    pub fn start(&self) -> &[f64] {
        self.sol.initial_state()
    }

    pub fn end(&self) -> &[f64] {
        self.sol.final_state()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t_end()
    }

    /// Integrator step nodes.
    pub fn times(&self) -> Vec<f64> {
        self.sol.times()
    }

    pub fn states(&self) -> Vec<Vec<f64>> {
        self.sol.states()
    }

    pub fn state_at(&self, t: f64) -> Result<DVector<f64>, FlowError> {
        if !self.sol.contains(t) {
            let (a, b) = (self.sol.t0(), self.sol.t_end());
            return Err(FlowError::OutOfSpan {
                t,
                lo: a.min(b),
                hi: a.max(b),
            });
        }
        Ok(DVector::from_vec(self.sol.eval(t)))
    }

    /// Largest gap between the interpolant at step midpoints and a fresh
    /// integration started from the preceding node.
    pub fn midpoint_defect(&self, sys: &SystemDef, opts: OdeOptions) -> Result<f64, FlowError> {
        let times = self.times();
        let states = self.states();
        let mut worst: f64 = 0.0;
        for i in 0..times.len().saturating_sub(1) {
            let mid = 0.5 * (times[i] + times[i + 1]);
            let fresh = ode::solve(drift_rhs(sys), times[i], &states[i], mid, opts)?;
            let interp = self.sol.eval(mid);
            for (a, b) in fresh.final_state().iter().zip(&interp) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

fn drift_rhs(sys: &SystemDef) -> impl FnMut(f64, &[f64], &mut [f64]) -> Result<(), OdeError> + '_ {
    move |_t, y, dy| Ok(sys.drift.eval_into(y, dy)?)
}

/// `exp(t X0)(x0)` on `[0, t]` (or `[t, 0]`).
pub fn flow(sys: &SystemDef, x0: &[f64], t: f64, opts: OdeOptions) -> Result<Trajectory, FlowError> {
    check_dim(sys, x0)?;
    let sol = ode::solve(drift_rhs(sys), 0.0, x0, t, opts)?;
    Ok(Trajectory { sol })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub t1: f64,
    pub t2: f64,
    /// `φ(t2, t1)`: maps perturbations at `t1` to perturbations at `t2`.
    pub matrix: DMatrix<f64>,
}

/// `φ(t2, t1)` along `traj`, from `∂φ/∂t2 = A(t2) φ`, `φ(t1, t1) = I`.
pub fn transition(
    sys: &SystemDef,
    traj: &Trajectory,
    t1: f64,
    t2: f64,
    opts: OdeOptions,
) -> Result<TransitionMatrix, FlowError> {
    traj.state_at(t1)?;
    traj.state_at(t2)?;
    let d = sys.dim();
    let jac = sys.drift.jacobian();
    let mut x = vec![0.0; d];
    let mut a = DMatrix::zeros(d, d);
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), OdeError> {
        traj.sol.eval_into(t, &mut x);
        eval_matrix_into(&jac, &x, &mut a)?;
        let phi = DMatrix::from_column_slice(d, d, y);
        let out = &a * phi;
        dy.copy_from_slice(out.as_slice());
        Ok(())
    };
    let eye = DMatrix::<f64>::identity(d, d);
    let sol = ode::solve(rhs, t1, eye.as_slice(), t2, opts)?;
    Ok(TransitionMatrix {
        t1,
        t2,
        matrix: DMatrix::from_column_slice(d, d, sol.final_state()),
    })
}

fn eval_matrix_into(m: &ExprMatrix, x: &[f64], out: &mut DMatrix<f64>) -> Result<(), ExprError> {
    for i in 0..m.rows {
        for j in 0..m.cols {
            out[(i, j)] = m.get(i, j).eval(x)?;
        }
    }
    Ok(())
}

/// Joint solution of `x' = X0(x)`, `Ψ' = -Ψ A(x)` sampled on a time grid.
#[derive(Debug, Clone)]
pub struct Transport {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// `Ψ(t) = φ(0, t)` at each grid time.
    pub back: Vec<DMatrix<f64>>,
}

impl Transport {
    /// `φ(t_j, 0) = Ψ(t_j)⁻¹`.
    pub fn forward(&self, j: usize) -> DMatrix<f64> {
        self.back[j]
            .clone()
            .try_inverse()
            .expect("transition matrices are invertible")
    }
}

/// Integrate state and inverse transition matrix together, landing exactly on `times`
/// (which must be monotone away from 0).
pub fn transport(
    sys: &SystemDef,
    x0: &[f64],
    times: &[f64],
    opts: OdeOptions,
) -> Result<Transport, FlowError> {
    check_dim(sys, x0)?;
    let d = sys.dim();
    let jac = sys.drift.jacobian();
    let constant_zero = (0..d).all(|i| (0..d).all(|j| jac.get(i, j).is_zero()));
    let mut a = DMatrix::zeros(d, d);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), OdeError> {
        sys.drift.eval_into(&y[..d], &mut dy[..d])?;
        if constant_zero {
            dy[d..].iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        eval_matrix_into(&jac, &y[..d], &mut a)?;
        let psi = DMatrix::from_column_slice(d, d, &y[d..]);
        let out = -(psi * &a);
        dy[d..].copy_from_slice(out.as_slice());
        Ok(())
    };
    let mut y0 = x0.to_vec();
    y0.extend(DMatrix::<f64>::identity(d, d).as_slice());
    let ys = ode::solve_at(rhs, 0.0, &y0, times, opts)?;
    let mut states = Vec::with_capacity(ys.len());
    let mut back = Vec::with_capacity(ys.len());
    for y in ys {
        states.push(DVector::from_column_slice(&y[..d]));
        back.push(DMatrix::from_column_slice(d, d, &y[d..]));
    }
    Ok(Transport {
        times: times.to_vec(),
        states,
        back,
    })
}

/// `(exp(-τX0)_* X^k)(x) = φ(0, τ) X^k(exp(τX0)(x))`.
pub fn pushforward(
    sys: &SystemDef,
    x: &[f64],
    tau: f64,
    k: usize,
    opts: OdeOptions,
) -> Result<DVector<f64>, FlowError> {
    let field = sys.controls.get(k).ok_or(FlowError::ControlIndex {
        index: k,
        m: sys.inputs(),
    })?;
    let tr = transport(sys, x, &[tau], opts)?;
    Ok(&tr.back[0] * field.eval(tr.states[0].as_slice())?)
}

/// Uniform grid with `steps` intervals; a single point when `t1 == t2`.
pub fn uniform_grid(t1: f64, t2: f64, steps: usize) -> Vec<f64> {
    if t1 == t2 || steps == 0 {
        return vec![t1];
    }
    (0..=steps)
        .map(|j| {
            if j == steps {
                t2
            } else {
                t1 + (t2 - t1) * j as f64 / steps as f64
            }
        })
        .collect()
}

/// Map applied to transported vectors before they are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleProjection {
    None,
    /// Coordinate truncation `π'`.
    Truncate { proj: ProjectionSpec },
    /// `(π ∘ exp(tf X0))'(x)`: transport forward to `tf`, then truncate.
    AfterFlow { tf: f64, proj: ProjectionSpec },
}

impl SampleProjection {
    pub fn kept(&self) -> Option<&[usize]> {
        match self {
            SampleProjection::None => None,
            SampleProjection::Truncate { proj } | SampleProjection::AfterFlow { proj, .. } => {
                Some(&proj.keep)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub tau: f64,
    /// Index into the control set's generator list.
    pub generator: usize,
    pub v: Vec<f64>,
}

/// Finite sample of `E^U_{[t1,t2]}(x)`, possibly projected.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TangentSample {
    pub base: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    pub steps: usize,
    pub projection: SampleProjection,
    pub taus: Vec<f64>,
    /// Per grid time, the matrix `Q Ψ(τ) B(x̄(τ))` whose image of `U` is the sampled set.
    #[serde(skip)]
    pub maps: Vec<DMatrix<f64>>,
    /// Per grid time, `Q Ψ(τ)` alone.
    #[serde(skip)]
    pub frames: Vec<DMatrix<f64>>,
    #[serde(skip)]
    pub states: Vec<DVector<f64>>,
    pub vectors: Vec<TangentVector>,
}

impl TangentSample {
    pub fn dim(&self) -> usize {
        self.maps.first().map_or(0, |m| m.nrows())
    }

    pub fn vecs(&self) -> Vec<DVector<f64>> {
        self.vectors
            .iter()
            .map(|t| DVector::from_column_slice(&t.v))
            .collect()
    }

    /// CSV with header `tau,k,v0,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "tau,k")?;
        for i in 0..self.dim() {
            write!(w, ",v{i}")?;
        }
        writeln!(w)?;
        for t in &self.vectors {
            write!(w, "{},{}", t.tau, t.generator)?;
            for c in &t.v {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Sample `E^U_τ(x)` for `τ` on a uniform grid over `[t1, t2]`, applying each
/// nonzero generator of `U`.
pub fn sample_e(
    sys: &SystemDef,
    u: &ControlSet,
    x: &[f64],
    t1: f64,
    t2: f64,
    steps: usize,
    projection: &SampleProjection,
    opts: OdeOptions,
) -> Result<TangentSample, FlowError> {
    check_dim(sys, x)?;
    let taus = uniform_grid(t1, t2, steps);
    // Integrate outward from 0 in each direction so solve_at sees monotone times.
    let mut tr_times: Vec<f64> = taus.clone();
    let tf = match projection {
        SampleProjection::AfterFlow { tf, .. } => Some(*tf),
        _ => None,
    };
    if let Some(tf) = tf {
        tr_times.push(tf);
    }
    let (mut neg, mut pos): (Vec<f64>, Vec<f64>) = tr_times.iter().partition(|&&t| t < 0.0);
    neg.sort_by(|a, b| b.total_cmp(a));
    neg.dedup();
    pos.sort_by(f64::total_cmp);
    pos.dedup();
    let tr_pos = transport(sys, x, &pos, opts)?;
    let tr_neg = transport(sys, x, &neg, opts)?;
    let lookup = |t: f64| -> (DVector<f64>, DMatrix<f64>) {
        let (tr, list) = if t < 0.0 {
            (&tr_neg, &neg)
        } else {
            (&tr_pos, &pos)
        };
        let j = list
            .iter()
            .position(|&s| s == t)
            .expect("grid time was integrated");
        (tr.states[j].clone(), tr.back[j].clone())
    };

    let front = match projection {
        SampleProjection::None => DMatrix::identity(sys.dim(), sys.dim()),
        SampleProjection::Truncate { proj } => proj.matrix(sys.dim()),
        SampleProjection::AfterFlow { tf, proj } => {
            let (_, back) = lookup(*tf);
            proj.matrix(sys.dim())
                * back
                    .try_inverse()
                    .expect("transition matrices are invertible")
        }
    };

    let gens = u.generators();
    let mut maps = Vec::with_capacity(taus.len());
    let mut frames = Vec::with_capacity(taus.len());
    let mut states = Vec::with_capacity(taus.len());
    let mut vectors = Vec::new();
    for &tau in &taus {
        let (state, back) = lookup(tau);
        let b = sys.control_matrix(state.as_slice())?;
        let frame = &front * back;
        let m = &frame * b;
        for (gi, g) in gens.iter().enumerate() {
            if g.iter().all(|c| *c == 0.0) {
                continue;
            }
            let v = &m * g;
            vectors.push(TangentVector {
                tau,
                generator: gi,
                v: v.as_slice().to_vec(),
            });
        }
        maps.push(m);
        frames.push(frame);
        states.push(state);
    }
    Ok(TangentSample {
        base: x.to_vec(),
        t1,
        t2,
        steps,
        projection: projection.clone(),
        taus,
        maps,
        frames,
        states,
        vectors,
    })
}

/// Minimal period `T(x)` of the drift orbit through `x`.
pub fn period(sys: &SystemDef, x: &[f64]) -> Result<f64, FlowError> {
    check_dim(sys, x)?;
    match &sys.product_form {
        Some(pf) => {
            let w = pf.omega.eval(x)?;
            if w.abs() < 1e-14 {
                return Err(FlowError::ZeroFrequency);
            }
            Ok(2.0 * PI / w.abs())
        }
        None => sys.period.filter(|t| *t > 0.0).ok_or(FlowError::NoPeriod),
    }
}

/// Piecewise-constant control: value `values[i]` on `[breaks[i], breaks[i+1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub breaks: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ControlSchedule {
    pub fn new(breaks: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, FlowError> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(FlowError::Schedule(format!(
                "{} breakpoints for {} segments",
                breaks.len(),
                values.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(FlowError::Schedule("breakpoints must be nondecreasing".into()));
        }
        Ok(ControlSchedule { breaks, values })
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().expect("nonempty")
    }
}

/// Solution of the controlled system, one dense piece per control segment.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    breaks: Vec<f64>,
    pieces: Vec<DenseSolution>,
}

impl ControlledPath {
    pub fn end(&self) -> &[f64] {
        self.pieces.last().expect("nonempty").final_state()
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let i = self
            .breaks
            .partition_point(|&b| b <= t)
            .saturating_sub(1)
            .min(self.pieces.len() - 1);
        self.pieces[i].eval(t)
    }
}

/// Integrate `ẋ = X0 + Σ u_k X^k` under a piecewise-constant control,
/// restarting the integrator at each breakpoint.
pub fn flow_controlled(
    sys: &SystemDef,
    x0: &[f64],
    schedule: &ControlSchedule,
    opts: OdeOptions,
) -> Result<ControlledPath, FlowError> {
    check_dim(sys, x0)?;
    let d = sys.dim();
    let mut pieces = Vec::with_capacity(schedule.values.len());
    let mut x = x0.to_vec();
    for (i, u) in schedule.values.iter().enumerate() {
        if u.len() != sys.inputs() {
            return Err(FlowError::Schedule(format!(
                "segment {i} has {} control values, system has {}",
                u.len(),
                sys.inputs()
            )));
        }
        let mut tmp = vec![0.0; d];
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| -> Result<(), OdeError> {
            sys.drift.eval_into(y, dy)?;
            for (uk, f) in u.iter().zip(&sys.controls) {
                if *uk != 0.0 {
                    f.eval_into(y, &mut tmp)?;
                    for (a, b) in dy.iter_mut().zip(&tmp) {
                        *a += uk * b;
                    }
                }
            }
            Ok(())
        };
        let sol = ode::solve(rhs, schedule.breaks[i], &x, schedule.breaks[i + 1], opts)?;
        x = sol.final_state().to_vec();
        pieces.push(sol);
    }
    Ok(ControlledPath {
        breaks: schedule.breaks.clone(),
        pieces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, Scope, VectorField};
    use std::sync::Arc;

    fn chart(names: &[&str]) -> Arc<[String]> {
        names.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
    }

    fn fields(c: &Arc<[String]>, srcs: &[&[&str]]) -> Vec<VectorField> {
        let scope = Scope {
            coords: c,
            params: None,
        };
        srcs.iter()
            .map(|s| VectorField::parse(s, &scope).unwrap())
            .collect()
    }

    pub(crate) fn rotating_input() -> SystemDef {
        let c = chart(&["I1", "I2", "I3", "phi"]);
        let x1 = fields(
            &c,
            &[&["cos(phi)", "sin(phi)", "-I2/2*cos(phi) + I1/2*sin(phi)", "0"]],
        );
        SystemDef::product("rotating_input", c, Expr::one(), x1).unwrap()
    }

    fn sector_system(theta: f64) -> SystemDef {
        let c = chart(&["I1", "I2", "I3", "phi"]);
        let (s, co) = theta.sin_cos();
        let x1 = [
            format!("cos(phi)*{co}"),
            format!("sin(phi)*{co}"),
            format!("{s}"),
            "0".into(),
        ];
        let x2 = [
            format!("-cos(phi)*{s}"),
            format!("-sin(phi)*{s}"),
            format!("{co}"),
            "0".into(),
        ];
        let r1: Vec<&str> = x1.iter().map(String::as_str).collect();
        let r2: Vec<&str> = x2.iter().map(String::as_str).collect();
        let f = fields(&c, &[&r1, &r2]);
        SystemDef::product("sector_system", c, Expr::one(), f).unwrap()
    }

    fn linear(a: &[&str], b: &[&str]) -> SystemDef {
        let c = chart(&["x", "y"]);
        let f = fields(&c, &[a, b]);
        SystemDef::new("lin", f[0].clone(), vec![f[1].clone()]).unwrap()
    }

    fn opts() -> OdeOptions {
        OdeOptions::default()
    }

    #[test]
    fn product_flow_advances_angle() {
        let sys = rotating_input();
        let tr = flow(&sys, &[0.3, -0.2, 1.0, 0.4], 2.5, opts()).unwrap();
        let e = tr.end();
        assert!((e[3] - 2.9).abs() < 1e-12 && e[0] == 0.3 && e[2] == 1.0);
    }

    #[test]
    fn zero_time_flow() {
        let tr = flow(&rotating_input(), &[1.0, 2.0, 3.0, 4.0], 0.0, opts()).unwrap();
        assert_eq!(tr.states().len(), 1);
        assert_eq!(tr.end(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn exponential_flow() {
        let sys = linear(&["x", "0"], &["0", "1"]);
        let tr = flow(&sys, &[1.0, 0.0], 1.0, opts()).unwrap();
        assert!((tr.end()[0] - std::f64::consts::E).abs() < 1e-9);
        assert!(tr.midpoint_defect(&sys, opts()).unwrap() < 1e-9);
        let back = flow(&sys, &[1.0, 0.0], -1.0, opts()).unwrap();
        assert!((back.end()[0] - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn nilpotent_transition() {
        let sys = linear(&["y", "0"], &["0", "1"]);
        let tr = flow(&sys, &[0.0, 1.0], 3.0, opts()).unwrap();
        let phi = transition(&sys, &tr, 0.0, 2.0, opts()).unwrap().matrix;
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!((phi - expected).amax() < 1e-10);
        let id = transition(&sys, &tr, 1.0, 1.0, opts()).unwrap().matrix;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn zero_jacobian_gives_identity() {
        let sys = rotating_input();
        let tr = flow(&sys, &[0.0; 4], 3.0, opts()).unwrap();
        let phi = transition(&sys, &tr, 0.5, 2.5, opts()).unwrap().matrix;
        assert!((phi - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn cocycle_on_rotating_drift() {
        // Drift with nontrivial Jacobian: a rotation about the origin plus shear.
        let c = chart(&["x", "y", "z"]);
        let f = fields(&c, &[&["-y + 0.1*x*z", "x", "0.2*sin(x)"], &["1", "0", "0"]]);
        let sys = SystemDef::new("rot", f[0].clone(), vec![f[1].clone()]).unwrap();
        let tr = flow(&sys, &[0.3, 0.1, -0.2], 3.0, opts()).unwrap();
        let p = |a: f64, b: f64| transition(&sys, &tr, a, b, opts()).unwrap().matrix;
        let lhs = p(0.0, 2.0);
        let rhs = p(1.0, 2.0) * p(0.0, 1.0);
        assert!((lhs - rhs).amax() < 1e-9);
        let back = p(2.0, 0.0);
        assert!((back * p(0.0, 2.0) - DMatrix::identity(3, 3)).amax() < 1e-9);
    }

    #[test]
    fn transport_matches_transition() {
        let c = chart(&["x", "y"]);
        let f = fields(&c, &[&["-y", "x + 0.3*x^2"], &["0", "1"]]);
        let sys = SystemDef::new("nl", f[0].clone(), vec![f[1].clone()]).unwrap();
        let x0 = [0.4, -0.1];
        let tr = flow(&sys, &x0, 2.0, opts()).unwrap();
        let phi20 = transition(&sys, &tr, 2.0, 0.0, opts()).unwrap().matrix;
        let t = transport(&sys, &x0, &[2.0], opts()).unwrap();
        assert!((&t.back[0] - phi20).amax() < 1e-9);
    }

    #[test]
    fn pushforward_of_angle_dependent_field() {
        // X1 = sin(phi) ∂I, drift ∂phi: pushforward is sin(phi + τ) ∂I.
        let c = chart(&["I", "phi"]);
        let f = fields(&c, &[&["sin(phi)", "0"]]);
        let sys = SystemDef::product("toy", c, Expr::one(), f).unwrap();
        for &tau in &[0.0, 0.7, -1.3, 4.0] {
            let v = pushforward(&sys, &[0.2, 0.5], tau, 0, opts()).unwrap();
            assert!((v[0] - (0.5f64 + tau).sin()).abs() < 1e-12);
            assert_eq!(v[1], 0.0);
        }
    }

    #[test]
    fn heisenberg_pushforward_quarter_turn() {
        let v = pushforward(&rotating_input(), &[0.0; 4], PI / 2.0, 0, opts()).unwrap();
        let expected = [0.0, 1.0, 0.0, 0.0];
        for i in 0..4 {
            assert!((v[i] - expected[i]).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn pushforward_at_zero_is_the_field() {
        let c = chart(&["x", "y"]);
        let f = fields(&c, &[&["-y", "x + 0.3*x^2"], &["cos(x)", "y"]]);
        let sys = SystemDef::new("nl", f[0].clone(), vec![f[1].clone()]).unwrap();
        let x = [0.4, -0.1];
        let v = pushforward(&sys, &x, 0.0, 0, opts()).unwrap();
        assert_eq!(v, sys.controls[0].eval(&x).unwrap());
        assert!(pushforward(&sys, &x, 0.0, 1, opts()).is_err());
    }

    #[test]
    fn sample_is_linear_in_generators() {
        let sys = rotating_input();
        let x = [0.3, 0.2, 0.1, 0.0];
        let u1 = ControlSet::interval(-1.0, 1.0);
        let u2 = u1.scale(2.0).unwrap();
        let none = SampleProjection::None;
        let a = sample_e(&sys, &u1, &x, 0.0, 2.0, 8, &none, opts()).unwrap();
        let b = sample_e(&sys, &u2, &x, 0.0, 2.0, 8, &none, opts()).unwrap();
        for (p, q) in a.vectors.iter().zip(&b.vectors) {
            for (s, t) in p.v.iter().zip(&q.v) {
                assert!((2.0 * s - t).abs() <= 1e-12 * (1.0 + t.abs()));
            }
        }
    }

    #[test]
    fn degenerate_grid_is_single_time() {
        let a = sample_e(
            &rotating_input(),
            &ControlSet::interval(0.0, 1.0),
            &[0.0; 4],
            0.7,
            0.7,
            16,
            &SampleProjection::None,
            opts(),
        )
        .unwrap();
        assert_eq!(a.taus, vec![0.7]);
        assert_eq!(a.vectors.len(), 1);
    }

    #[test]
    fn heisenberg_samples_lie_on_plane() {
        let sys = rotating_input();
        let proj = SampleProjection::Truncate {
            proj: ProjectionSpec::drop_angle(4),
        };
        for x in [[0.0, 0.0, 0.0, 0.0], [0.7, -1.2, 0.4, 1.1], [-2.0, 0.5, 3.0, -0.3]] {
            let s = sample_e(&sys, &ControlSet::interval(0.0, 1.0), &x, 0.0, 2.0 * PI, 64, &proj, opts())
                .unwrap();
            for t in &s.vectors {
                let v = &t.v;
                assert!((0.5 * x[1] * v[0] - 0.5 * x[0] * v[1] + v[2]).abs() < 1e-9);
                assert!(v[0] * v[0] + v[1] * v[1] <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn sector_projected_membership() {
        let (theta, alpha) = (0.3f64, 0.5f64);
        let sys = sector_system(theta);
        let u = ControlSet::DiskSector {
            alpha,
            radius: 1.0,
            generator_count: 33,
        };
        let proj = SampleProjection::Truncate {
            proj: ProjectionSpec::drop_angle(4),
        };
        let s = sample_e(&sys, &u, &[0.1, 0.2, 0.3, 0.4], 0.0, 2.0 * PI, 64, &proj, opts()).unwrap();
        assert_eq!(s.vectors.len(), 65 * 33);
        for t in &s.vectors {
            let v = &t.v;
            let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!((r * r + v[2] * v[2]).sqrt() <= 1.0 + 1e-9);
            assert!(r * (theta - alpha).tan() <= v[2] + 1e-9);
            assert!(v[2] <= r * (theta + alpha).tan() + 1e-9);
        }
    }

    #[test]
    fn orbit_invariance() {
        // Full-period samples at two phases of the same orbit span the same set.
        let sys = rotating_input();
        let proj = SampleProjection::Truncate {
            proj: ProjectionSpec::drop_angle(4),
        };
        let u = ControlSet::interval(0.0, 1.0);
        let n = 64;
        let h = 2.0 * PI / n as f64;
        let a = sample_e(&sys, &u, &[0.2, 0.1, 0.0, 0.0], 0.0, 2.0 * PI, n, &proj, opts()).unwrap();
        let b = sample_e(&sys, &u, &[0.2, 0.1, 0.0, 3.0 * h], 0.0, 2.0 * PI, n, &proj, opts()).unwrap();
        let dist = |p: &[f64], q: &[f64]| -> f64 {
            p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        for va in &a.vectors {
            let best = b
                .vectors
                .iter()
                .map(|vb| dist(&va.v, &vb.v))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-9, "{best}");
        }
    }

    #[test]
    fn refinement_keeps_coarse_samples() {
        let sys = sector_system(0.3);
        let u = ControlSet::disk_sector(0.5);
        let proj = SampleProjection::Truncate {
            proj: ProjectionSpec::drop_angle(4),
        };
        let x = [0.0; 4];
        let coarse = sample_e(&sys, &u, &x, 0.0, 2.0 * PI, 16, &proj, opts()).unwrap();
        let fine = sample_e(&sys, &u, &x, 0.0, 2.0 * PI, 32, &proj, opts()).unwrap();
        for c in &coarse.vectors {
            assert!(fine.vectors.iter().any(|f| f.generator == c.generator
                && f.v.iter().zip(&c.v).all(|(a, b)| (a - b).abs() < 1e-9)));
        }
    }

    #[test]
    fn after_flow_projection_uses_forward_transport() {
        // Shear drift: ẋ = y. φ(tf, 0) mixes y into x.
        let sys = linear(&["y", "0"], &["0", "1"]);
        let proj = SampleProjection::AfterFlow {
            tf: 2.0,
            proj: ProjectionSpec::new(vec![0], 2).unwrap(),
        };
        let s = sample_e(&sys, &ControlSet::interval(0.0, 1.0), &[0.0, 0.0], 0.0, 2.0, 4, &proj, opts())
            .unwrap();
        // P φ(2,0) φ(0,τ) e2 = P φ(2,τ) e2 = 2 - τ.
        for t in &s.vectors {
            assert!((t.v[0] - (2.0 - t.tau)).abs() < 1e-9);
        }
    }

    #[test]
    fn period_examples() {
        assert!((period(&rotating_input(), &[0.0; 4]).unwrap() - 2.0 * PI).abs() < 1e-15);
        let c = chart(&["I", "phi"]);
        let f = fields(&c, &[&["1", "0"]]);
        let two = SystemDef::product("w2", c.clone(), Expr::constant(2.0), f.clone()).unwrap();
        assert!((period(&two, &[0.0, 0.0]).unwrap() - PI).abs() < 1e-15);
        let w = crate::expr::parse_expr("I", &c).unwrap();
        let vary = SystemDef::product("wI", c, w, f).unwrap();
        assert_eq!(period(&vary, &[0.0, 1.0]), Err(FlowError::ZeroFrequency));
        let sys = linear(&["y", "0"], &["0", "1"]);
        assert_eq!(period(&sys, &[0.0, 0.0]), Err(FlowError::NoPeriod));
    }

    #[test]
    fn controlled_flow_integrates_segments() {
        let c = chart(&["I", "phi"]);
        let f = fields(&c, &[&["1", "0"]]);
        let sys = SystemDef::product("toy", c, Expr::one(), f).unwrap();
        let sched =
            ControlSchedule::new(vec![0.0, 1.0, 3.0], vec![vec![0.5], vec![0.0]]).unwrap();
        let p = flow_controlled(&sys, &[0.0, 0.0], &sched, opts()).unwrap();
        assert!((p.end()[0] - 0.5).abs() < 1e-12 && (p.end()[1] - 3.0).abs() < 1e-12);
        assert!((p.state_at(0.5)[0] - 0.25).abs() < 1e-12);
        assert!(ControlSchedule::new(vec![0.0, 1.0], vec![]).is_err());
    }
}

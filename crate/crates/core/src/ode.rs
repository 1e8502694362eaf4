//! Adaptive Dormand–Prince 5(4) integrator with continuous (4th order) output.
//!
//! Integration runs forward or backward in time depending on the sign of
//! `t_end - t0`.

use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (solution blows up or is not smooth)")]
    StepUnderflow { t: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("maximum number of steps ({steps}) exceeded at t = {t}")]
    MaxSteps { steps: usize, t: f64 },
    #[error("right-hand side: {0}")]
    Rhs(#[from] ExprError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on |h|; `None` means the full span.
    pub h_max: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 2_000_000,
            h_max: None,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone)]
struct DenseStep {
    t: f64,
    h: f64,
    /// Five blocks of length `dim`.
    rcont: Vec<f64>,
}

/// Solution with dense output over `[t0, t_end]` (or `[t_end, t0]`).
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    t0: f64,
    y0: Vec<f64>,
    t_end: f64,
    y_end: Vec<f64>,
    steps: Vec<DenseStep>,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.y0
    }

    pub fn final_state(&self) -> &[f64] {
        &self.y_end
    }

    /// Times of the accepted step boundaries, starting with `t0`.
    pub fn times(&self) -> Vec<f64> {
        let mut t = vec![self.t0];
        t.extend(self.steps.iter().map(|s| s.t + s.h));
        t
    }

    /// States at [`Self::times`].
    pub fn states(&self) -> Vec<Vec<f64>> {
        let mut out = vec![self.y0.clone()];
        for s in &self.steps {
            let d = self.dim;
            out.push((0..d).map(|i| s.rcont[i] + s.rcont[d + i]).collect());
        }
        out
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t_end >= self.t0 {
            (self.t0, self.t_end)
        } else {
            (self.t_end, self.t0)
        };
        t >= lo - 1e-12 * (1.0 + lo.abs()) && t <= hi + 1e-12 * (1.0 + hi.abs())
    }

    /// Interpolated state at `t` (clamped to the solution span).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        if self.steps.is_empty() {
            out.copy_from_slice(&self.y0);
            return;
        }
        let forward = self.t_end >= self.t0;
        // Steps are ordered along the direction of integration.
        let idx = self
            .steps
            .partition_point(|s| if forward { s.t + s.h < t } else { s.t + s.h > t })
            .min(self.steps.len() - 1);
        let s = &self.steps[idx];
        let theta = ((t - s.t) / s.h).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let d = self.dim;
        let r = &s.rcont;
        for i in 0..d {
            out[i] = r[i]
                + theta
                    * (r[d + i]
                        + theta1 * (r[2 * d + i] + theta * (r[3 * d + i] + theta1 * r[4 * d + i])));
        }
    }
}

struct Stepper<'f, F> {
    f: &'f mut F,
    opts: OdeOptions,
    dim: usize,
    t: f64,
    y: Vec<f64>,
    k1: Vec<f64>,
    h: f64,
    steps_taken: usize,
    k: [Vec<f64>; 6],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
}

impl<'f, F> Stepper<'f, F>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), OdeError>,
{
    fn new(f: &'f mut F, t0: f64, y0: &[f64], opts: OdeOptions) -> Result<Self, OdeError> {
        let dim = y0.len();
        let mut k1 = vec![0.0; dim];
        f(t0, y0, &mut k1)?;
        Ok(Stepper {
            f,
            opts,
            dim,
            t: t0,
            y: y0.to_vec(),
            k1,
            h: 0.0,
            steps_taken: 0,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
        })
    }

    fn scaled_norm(&self, v: &[f64], reference: &[f64]) -> f64 {
        if self.dim == 0 {
            return 0.0;
        }
        let s: f64 = v
            .iter()
            .zip(reference)
            .map(|(x, r)| {
                let sc = self.opts.atol + self.opts.rtol * r.abs();
                (x / sc).powi(2)
            })
            .sum();
        (s / self.dim as f64).sqrt()
    }

    fn initial_step(&mut self, span: f64) -> Result<f64, OdeError> {
        let d0 = self.scaled_norm(&self.y, &self.y);
        let d1 = self.scaled_norm(&self.k1, &self.y);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(span.abs());
        // Explicit Euler probe to estimate the second derivative.
        let dir = span.signum();
        for i in 0..self.dim {
            self.ytmp[i] = self.y[i] + dir * h0 * self.k1[i];
        }
        let mut f1 = vec![0.0; self.dim];
        (self.f)(self.t + dir * h0, &self.ytmp, &mut f1)?;
        let diff: Vec<f64> = f1.iter().zip(&self.k1).map(|(a, b)| a - b).collect();
        let d2 = self.scaled_norm(&diff, &self.y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span.abs()).max(1e-14 * span.abs()))
    }

    /// Advance exactly to `target`, optionally recording dense output.
    fn advance_to(
        &mut self,
        target: f64,
        mut record: Option<&mut Vec<DenseStep>>,
    ) -> Result<(), OdeError> {
        let span = target - self.t;
        if span == 0.0 {
            return Ok(());
        }
        let dir = span.signum();
        if self.h == 0.0 {
            self.h = self.initial_step(span)?;
        }
        let h_max = self.opts.h_max.unwrap_or(f64::INFINITY);
        let mut h = self.h.abs().min(h_max);
        let d = self.dim;
        let mut last_rejected = false;
        loop {
            let remaining = (target - self.t) * dir;
            if remaining <= 0.0 {
                return Ok(());
            }
            let mut landing = false;
            if h >= remaining * (1.0 - 1e-12) {
                h = remaining;
                landing = true;
            }
            if h < 1e-14 * (1.0 + self.t.abs()) {
                return Err(OdeError::StepUnderflow { t: self.t });
            }
            self.steps_taken += 1;
            if self.steps_taken > self.opts.max_steps {
                return Err(OdeError::MaxSteps {
                    steps: self.opts.max_steps,
                    t: self.t,
                });
            }
            let hs = dir * h;
            let t = self.t;
            let y = &self.y;
            let k1 = &self.k1;
            let [k2, k3, k4, k5, k6, k7] = &mut self.k;
            let ytmp = &mut self.ytmp;
            for i in 0..d {
                ytmp[i] = y[i] + hs * A21 * k1[i];
            }
            (self.f)(t + C2 * hs, ytmp, k2)?;
            for i in 0..d {
                ytmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.f)(t + C3 * hs, ytmp, k3)?;
            for i in 0..d {
                ytmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.f)(t + C4 * hs, ytmp, k4)?;
            for i in 0..d {
                ytmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.f)(t + C5 * hs, ytmp, k5)?;
            for i in 0..d {
                ytmp[i] = y[i]
                    + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if landing { target } else { t + hs };
            (self.f)(t_new, ytmp, k6)?;
            let ynew = &mut self.ynew;
            for i in 0..d {
                ynew[i] = y[i]
                    + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            (self.f)(t_new, ynew, k7)?;
            let mut err_sq = 0.0;
            let mut finite = true;
            for i in 0..d {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(ynew[i].abs());
                err_sq += (e / sc).powi(2);
                finite &= ynew[i].is_finite();
            }
            if !finite {
                if h < 1e-12 {
                    return Err(OdeError::NonFinite { t });
                }
                h *= 0.1;
                last_rejected = true;
                continue;
            }
            let err = if d == 0 { 0.0 } else { (err_sq / d as f64).sqrt() };
            if err <= 1.0 {
                if let Some(rec) = record.as_deref_mut() {
                    let mut rcont = vec![0.0; 5 * d];
                    for i in 0..d {
                        let ydiff = ynew[i] - y[i];
                        let bspl = hs * k1[i] - ydiff;
                        rcont[i] = y[i];
                        rcont[d + i] = ydiff;
                        rcont[2 * d + i] = bspl;
                        rcont[3 * d + i] = ydiff - hs * k7[i] - bspl;
                        rcont[4 * d + i] = hs
                            * (D1 * k1[i]
                                + D3 * k3[i]
                                + D4 * k4[i]
                                + D5 * k5[i]
                                + D6 * k6[i]
                                + D7 * k7[i]);
                    }
                    rec.push(DenseStep {
                        t,
                        h: t_new - t,
                        rcont,
                    });
                }
                self.t = t_new;
                std::mem::swap(&mut self.y, &mut self.ynew);
                std::mem::swap(&mut self.k1, k7);
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                let fac = if last_rejected { fac.min(1.0) } else { fac };
                last_rejected = false;
                // A landing step may be artificially short; keep the previous size.
                if !landing {
                    h = (h * fac).min(h_max);
                }
                self.h = h;
            } else {
                h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                last_rejected = true;
            }
        }
    }
}

/// Integrate `y' = f(t, y)` from `t0` to `t_end`, keeping dense output.
pub fn solve<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: OdeOptions,
) -> Result<DenseSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), OdeError>,
{
    let mut stepper = Stepper::new(&mut f, t0, y0, opts)?;
    let mut steps = Vec::new();
    stepper.advance_to(t_end, Some(&mut steps))?;
    Ok(DenseSolution {
        dim: y0.len(),
        t0,
        y0: y0.to_vec(),
        t_end,
        y_end: stepper.y.clone(),
        steps,
    })
}

/// Integrate and return the state at each of `times`, landing on them exactly.
/// `times` must be monotone in the direction of integration from `t0`.
pub fn solve_at<F>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    times: &[f64],
    opts: OdeOptions,
) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), OdeError>,
{
    let mut stepper = Stepper::new(&mut f, t0, y0, opts)?;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        stepper.advance_to(t, None)?;
        out.push(stepper.y.clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_rhs(_t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), OdeError> {
        dy[0] = y[0];
        Ok(())
    }

    #[test]
    fn exponential_growth() {
        let sol = solve(exp_rhs, 0.0, &[1.0], 1.0, OdeOptions::default()).unwrap();
        assert!((sol.final_state()[0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn backward_integration() {
        let sol = solve(exp_rhs, 0.0, &[1.0], -2.0, OdeOptions::default()).unwrap();
        assert!((sol.final_state()[0] - (-2.0f64).exp()).abs() < 1e-10);
        let mid = sol.eval(-1.0)[0];
        assert!((mid - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn dense_output_is_accurate_between_nodes() {
        let rot = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[1];
            dy[1] = y[0];
            Ok(())
        };
        let sol = solve(rot, 0.0, &[1.0, 0.0], 10.0, OdeOptions::default()).unwrap();
        for i in 0..=1000 {
            let t = i as f64 * 0.01;
            let y = sol.eval(t);
            assert!((y[0] - t.cos()).abs() < 1e-8, "t={t}: {}", y[0] - t.cos());
            assert!((y[1] - t.sin()).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_span_returns_initial_state() {
        let sol = solve(exp_rhs, 0.5, &[3.0], 0.5, OdeOptions::default()).unwrap();
        assert_eq!(sol.times(), vec![0.5]);
        assert_eq!(sol.final_state(), &[3.0]);
    }

    #[test]
    fn lands_on_requested_times() {
        let times: Vec<f64> = (1..=8).map(|i| i as f64 * 0.25).collect();
        let ys = solve_at(exp_rhs, 0.0, &[1.0], &times, OdeOptions::default()).unwrap();
        for (t, y) in times.iter().zip(&ys) {
            assert!((y[0] - t.exp()).abs() < 1e-9 * t.exp());
        }
    }

    #[test]
    fn finite_time_blow_up_is_reported() {
        let blow = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0] * y[0];
            Ok(())
        };
        let err = solve(blow, 0.0, &[1.0], 2.0, OdeOptions::default()).unwrap_err();
        match err {
            OdeError::StepUnderflow { t } | OdeError::NonFinite { t } => {
                assert!((t - 1.0).abs() < 1e-3, "t={t}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

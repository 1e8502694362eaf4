//! Closed loops of the rotating single-input Heisenberg system: the two-period
//! "goldfish" control, its closed-form solution and the numeric cross-check.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::area::{area_property_test, AreaStats};
use crate::flow::{flow_controlled, ControlSchedule, FlowError};
use crate::models::heisenberg;
use crate::ode::OdeOptions;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GoldfishError {
    #[error("need 0 < eps1 < eps3 < eps2 < eps, got eps1={eps1}, eps3={eps3}, eps2={eps2}, eps={eps}")]
    Ordering { eps1: f64, eps2: f64, eps3: f64, eps: f64 },
    #[error("need 0 < eps2 < eps <= 1, got eps2={eps2}, eps={eps}")]
    Range { eps2: f64, eps: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Ratio `eps1 / eps2` that makes the swept areas of body and tail cancel.
pub fn eps1_ratio() -> f64 {
    let r3 = 3f64.sqrt();
    (((2.0 * PI + 3.0) * r3 - 5.0 * PI) / (2.0 * PI - 3.0 * r3)).sqrt()
}

/// Ratio `eps3 / eps2` that closes the planar curve.
pub fn eps3_ratio() -> f64 {
    3f64.sqrt() - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Levels {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps: f64,
}

pub fn levels(eps2: f64, eps: f64) -> Result<Levels, GoldfishError> {
    if !(eps2 > 0.0 && eps2 < eps && eps <= 1.0) {
        return Err(GoldfishError::Range { eps2, eps });
    }
    let l = Levels {
        eps1: eps1_ratio() * eps2,
        eps2,
        eps3: eps3_ratio() * eps2,
        eps,
    };
    if !(0.0 < l.eps1 && l.eps1 < l.eps3 && l.eps3 < l.eps2 && l.eps2 < l.eps) {
        return Err(GoldfishError::Ordering {
            eps1: l.eps1,
            eps2: l.eps2,
            eps3: l.eps3,
            eps: l.eps,
        });
    }
    Ok(l)
}

/// Reconstructed breakpoints (in units of π) and levels of the nonnegative
/// control on `[0, 4π]`: closes in `10π/3`, then zero.
pub const SCHEDULE: [(f64, f64, Level); 8] = [
    (0.0, 1.0 / 3.0, Level::One),
    (1.0 / 3.0, 0.5, Level::Two),
    (0.5, 1.5, Level::Zero),
    (1.5, 11.0 / 6.0, Level::Three),
    (11.0 / 6.0, 17.0 / 6.0, Level::Zero),
    (17.0 / 6.0, 3.0, Level::Two),
    (3.0, 10.0 / 3.0, Level::One),
    (10.0 / 3.0, 4.0, Level::Zero),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Zero,
    One,
    Two,
    Three,
    MinusThree,
}

impl Level {
    fn value(self, l: &Levels) -> f64 {
        match self {
            Level::Zero => 0.0,
            Level::One => l.eps1,
            Level::Two => l.eps2,
            Level::Three => l.eps3,
            Level::MinusThree => -l.eps3,
        }
    }
}

fn build(table: &[(f64, f64, Level)], l: &Levels) -> ControlSchedule {
    let mut breaks = vec![table[0].0 * PI];
    breaks.extend(table.iter().map(|(_, b, _)| b * PI));
    let values = table.iter().map(|(_, _, v)| vec![v.value(l)]).collect();
    ControlSchedule::new(breaks, values).expect("static table is well formed")
}

/// Nonnegative two-period schedule.
pub fn schedule(l: &Levels) -> ControlSchedule {
    build(&SCHEDULE, l)
}

/// Same loop with the zero gaps removed: half a turn flips the direction, so
/// the middle segment becomes negative. Closes in `4π/3`, within one period.
pub fn signed_schedule(l: &Levels) -> ControlSchedule {
    build(
        &[
            (0.0, 1.0 / 3.0, Level::One),
            (1.0 / 3.0, 0.5, Level::Two),
            (0.5, 5.0 / 6.0, Level::MinusThree),
            (5.0 / 6.0, 1.0, Level::Two),
            (1.0, 4.0 / 3.0, Level::One),
        ],
        l,
    )
}

/// Exact state at time `t` for a piecewise-constant scalar control, starting
/// from `x0 = (I1, I2, I3, φ)` at the schedule start.
pub fn closed_form(s: &ControlSchedule, x0: &[f64; 4], t: f64) -> [f64; 4] {
    let phi0 = x0[3] - s.start();
    let (mut re, mut im) = (x0[0], x0[1]);
    let mut i3 = x0[2];
    for (w, v) in s.breaks.windows(2).zip(&s.values) {
        let a = w[0];
        if t <= a {
            break;
        }
        let b = w[1].min(t);
        let c = v[0];
        // z_b - z_a = c (e^{i(φ0+b)} - e^{i(φ0+a)}) / i
        let (sb, cb) = (phi0 + b).sin_cos();
        let (sa, ca) = (phi0 + a).sin_cos();
        let dre = c * (sb - sa);
        let dim = -c * (cb - ca);
        let len = b - a;
        i3 += 0.5 * ((re * dim - im * dre) + c * c * (len - len.sin()));
        re += dre;
        im += dim;
    }
    [re, im, i3, x0[3] + (t - s.start())]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub closed_form: [f64; 4],
    pub numeric: [f64; 4],
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldfishReport {
    pub levels: Levels,
    pub start: [f64; 4],
    pub schedule: ControlSchedule,
    /// `|I(10π/3) - I(0)|` on the three action coordinates.
    pub closure_closed_form: f64,
    pub closure_numeric: f64,
    pub signed_closure: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub max_gap: f64,
    pub area: AreaStats,
}

fn action_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).take(3).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Build the loop for the given levels, evaluate it both ways and run the
/// one-period area test on auxiliary loops.
pub fn goldfish(eps2: f64, eps: f64, start: [f64; 4], opts: OdeOptions) -> Result<GoldfishReport, GoldfishError> {
    let l = levels(eps2, eps)?;
    let s = schedule(&l);
    let sys = heisenberg();
    let path = flow_controlled(&sys, &start, &s, opts)?;
    let t_close = 10.0 * PI / 3.0;
    let closure_closed_form = action_gap(&closed_form(&s, &start, t_close), &start);
    let closure_numeric = action_gap(&path.state_at(t_close), &start);
    let signed = signed_schedule(&l);
    let signed_closure = action_gap(&closed_form(&signed, &start, signed.end()), &start);
    let checkpoints: Vec<Checkpoint> = (1..=16)
        .map(|j| {
            let t = s.end() * j as f64 / 16.0;
            let cf = closed_form(&s, &start, t);
            let nv = path.state_at(t);
            let numeric = [nv[0], nv[1], nv[2], nv[3]];
            let gap = cf.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Checkpoint {
                t,
                closed_form: cf,
                numeric,
                gap,
            }
        })
        .collect();
    let max_gap = checkpoints.iter().map(|c| c.gap).fold(0.0, f64::max);
    Ok(GoldfishReport {
        levels: l,
        start,
        schedule: s,
        closure_closed_form,
        closure_numeric,
        signed_closure,
        checkpoints,
        max_gap,
        area: area_property_test(50, 0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert!((eps1_ratio() - 0.584_193_920_358_499_8).abs() < 1e-15);
        assert!((eps3_ratio() - 0.732_050_807_568_877_3).abs() < 1e-15);
    }

    #[test]
    fn constant_control_half_turn() {
        let s = ControlSchedule::new(vec![0.0, PI], vec![vec![1.0]]).unwrap();
        let x = closed_form(&s, &[0.0; 4], PI);
        assert!(x[0].abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!((x[2] - PI / 2.0).abs() < 1e-15);
        // Independent check by midpoint quadrature of the planar curve.
        let n = 200_000;
        let h = PI / n as f64;
        let c: f64 = (0..n)
            .map(|k| {
                let s = (k as f64 + 0.5) * h;
                let (i1, i2) = (s.sin(), 1.0 - s.cos());
                0.5 * (i1 * s.sin() - i2 * s.cos()) * h
            })
            .sum();
        assert!((c - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn loop_closes() {
        let r = goldfish(1.0 - 1e-9, 1.0, [0.3, -0.4, 0.2, 0.7], OdeOptions::with_tol(1e-12)).unwrap();
        assert!(r.closure_closed_form < 1e-9, "{}", r.closure_closed_form);
        assert!(r.closure_numeric < 1e-7, "{}", r.closure_numeric);
        assert!(r.signed_closure < 1e-9);
        assert!(r.max_gap < 1e-7);
        assert_eq!(r.area.violations, 0);
    }

    #[test]
    fn ordering_is_enforced() {
        assert!(matches!(levels(1.0, 1.0), Err(GoldfishError::Range { .. })));
        let l = levels(0.5, 0.8).unwrap();
        assert!(l.eps1 < l.eps3 && l.eps3 < l.eps2);
    }

    #[test]
    fn closure_for_any_start_and_scale() {
        for (eps2, x0) in [(0.1, [1.0, 2.0, 3.0, 0.0]), (0.7, [-0.5, 0.1, 0.0, 2.0])] {
            let l = levels(eps2, 1.0).unwrap();
            let x = closed_form(&schedule(&l), &x0, 10.0 * PI / 3.0);
            assert!(action_gap(&x, &x0) < 1e-12);
        }
    }
}

//! Randomized check that a closed planar loop driven by a nonnegative control
//! over one turn sweeps a nonnegative area.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::ControlSchedule;
use crate::goldfish::closed_form;

pub const INTERVALS: usize = 24;
pub const CLOSURE_TOL: f64 = 1e-8;
pub const AREA_TOL: f64 = 1e-8;
const MAX_ITER: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AreaError {
    #[error("control value {value} on interval {index} is negative")]
    Negative { index: usize, value: f64 },
    #[error("expected {INTERVALS} interval values, got {0}")]
    Length(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaTrial {
    pub closure: f64,
    pub i3_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AreaStats {
    pub trials: usize,
    pub closed: usize,
    pub discarded: usize,
    pub violations: usize,
    /// Smallest `I3(2π) - I3(0)` over closed trials.
    pub min_gain: f64,
}

/// `c_j = ∫ e^{is} ds` over interval `j`, as rows `(Re, Im)`.
fn closure_rows() -> Vec<Vector2<f64>> {
    let h = 2.0 * PI / INTERVALS as f64;
    (0..INTERVALS)
        .map(|j| {
            let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
            Vector2::new(b.sin() - a.sin(), a.cos() - b.cos())
        })
        .collect()
}

fn closure_residual(rows: &[Vector2<f64>], u: &[f64]) -> Vector2<f64> {
    rows.iter().zip(u).map(|(r, v)| r * *v).sum()
}

/// Alternate between the closure subspace and the nonnegative orthant, then
/// rescale to unit maximum. `None` if it does not close or collapses to zero.
pub fn close_control(u0: &[f64]) -> Option<Vec<f64>> {
    let rows = closure_rows();
    let gram: Matrix2<f64> = rows.iter().map(|r| r * r.transpose()).sum();
    let inv = gram.try_inverse()?;
    let mut u = u0.to_vec();
    for _ in 0..MAX_ITER {
        let lam = inv * closure_residual(&rows, &u);
        for (v, r) in u.iter_mut().zip(&rows) {
            *v = (*v - r.dot(&lam)).max(0.0);
        }
        if closure_residual(&rows, &u).norm() < CLOSURE_TOL * 1e-3 {
            break;
        }
    }
    let top = u.iter().cloned().fold(0.0, f64::max);
    if top < 1e-6 {
        return None;
    }
    u.iter_mut().for_each(|v| *v /= top);
    (closure_residual(&rows, &u).norm() <= CLOSURE_TOL).then_some(u)
}

/// Evaluate one nonnegative control on `[0, 2π]` through the closed form.
pub fn area_trial(u: &[f64], start: [f64; 4]) -> Result<AreaTrial, AreaError> {
    if u.len() != INTERVALS {
        return Err(AreaError::Length(u.len()));
    }
    if let Some((index, &value)) = u.iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(AreaError::Negative { index, value });
    }
    let h = 2.0 * PI / INTERVALS as f64;
    let breaks = (0..=INTERVALS).map(|j| j as f64 * h).collect();
    let s = ControlSchedule::new(breaks, u.iter().map(|v| vec![*v]).collect()).expect("fixed grid");
    let start = [start[0], start[1], start[2], 0.0];
    let end = closed_form(&s, &start, 2.0 * PI);
    Ok(AreaTrial {
        closure: ((end[0] - start[0]).powi(2) + (end[1] - start[1]).powi(2)).sqrt(),
        i3_gain: end[2] - start[2],
    })
}

/// `trials` random nonnegative controls, projected onto the closure constraint.
pub fn area_property_test(trials: usize, seed: u64) -> AreaStats {
    let mut stats = AreaStats {
        trials,
        min_gain: f64::INFINITY,
        ..AreaStats::default()
    };
    for i in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let raw: Vec<f64> = (0..INTERVALS).map(|_| rng.random::<f64>()).collect();
        let start = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
        let Some(u) = close_control(&raw) else {
            stats.discarded += 1;
            continue;
        };
        let t = area_trial(&u, start).expect("projection keeps the control nonnegative");
        if t.closure > CLOSURE_TOL {
            stats.discarded += 1;
            continue;
        }
        stats.closed += 1;
        stats.min_gain = stats.min_gain.min(t.i3_gain);
        if t.i3_gain < -AREA_TOL {
            stats.violations += 1;
        }
    }
    if stats.closed == 0 {
        stats.min_gain = 0.0;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_control_is_closed_and_flat() {
        let t = area_trial(&[0.0; INTERVALS], [0.5, -0.2, 1.0, 0.0]).unwrap();
        assert_eq!(t.closure, 0.0);
        assert_eq!(t.i3_gain, 0.0);
    }

    #[test]
    fn negative_controls_are_rejected() {
        let mut u = [0.5; INTERVALS];
        u[3] = -1.0;
        assert_eq!(
            area_trial(&u, [0.0; 4]).unwrap_err(),
            AreaError::Negative { index: 3, value: -1.0 }
        );
    }

    #[test]
    fn constant_control_closes_with_full_circle_area() {
        let t = area_trial(&[1.0; INTERVALS], [0.0; 4]).unwrap();
        assert!(t.closure < 1e-14);
        assert!((t.i3_gain - PI).abs() < 1e-12);
    }

    #[test]
    fn projection_closes_and_stays_nonnegative() {
        let raw: Vec<f64> = (0..INTERVALS).map(|j| ((j * 7919) % 13) as f64 / 13.0).collect();
        let u = close_control(&raw).unwrap();
        assert!(u.iter().all(|v| *v >= 0.0));
        assert!(closure_residual(&closure_rows(), &u).norm() <= CLOSURE_TOL);
    }

    #[test]
    fn random_trials_have_no_violations() {
        let s = area_property_test(100, 11);
        assert!(s.closed >= 90, "{s:?}");
        assert_eq!(s.violations, 0);
        assert!(s.min_gain >= -AREA_TOL);
    }
}

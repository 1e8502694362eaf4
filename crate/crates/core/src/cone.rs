//! Tests on finitely generated cones `cone{g_i} ⊂ R^n`.
//!
//! Generators are rays, so everything is computed on the unit vectors
//! `ĝ_i = g_i / |g_i|`; vectors shorter than [`ZERO_NORM`] are dropped.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{LinearProgram, LpError, LpStatus};

pub const ZERO_NORM: f64 = 1e-12;
pub const DELTA_MIN: f64 = 1e-9;
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConeError {
    #[error("empty generator list")]
    Empty,
    #[error("generator {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("LP reported {0:?} on a problem that is always feasible and bounded")]
    Unexpected(LpStatus),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeStatus {
    /// The cone is all of `R^n`.
    Full,
    /// Some nonzero `p` has `<p, g_i> <= 0` for all `i`.
    NotFull,
    /// Full rank, not full, and the polar cone has empty interior: the cone is
    /// (numerically) a closed half-space or similar borderline shape.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Weights on the unit rays, indexed like the input (dropped vectors get 0):
    /// `Σ λ_i ĝ_i = 0`, `Σ λ_i = 1`, `λ_i >= margin` on kept rays.
    Weights { lambda: Vec<f64> },
    /// Covector with `|p|∞ = 1` and `<p, g_i> <= 0`.
    Covector { p: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolarInterior {
    /// `<p, ĝ_i> <= -delta` for all rays, `|p|∞ <= 1`.
    Nonempty { p: Vec<f64>, delta: f64 },
    Empty,
    Unknown,
}

impl PolarInterior {
    pub fn is_nonempty(&self) -> bool {
        matches!(self, PolarInterior::Nonempty { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeVerdict {
    pub status: ConeStatus,
    pub witness: Witness,
    /// Optimal value of the positive-combination LP (0 when the rank is deficient).
    pub margin: f64,
    pub polar_interior: PolarInterior,
    pub rank: usize,
    /// Number of generators dropped as zero.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeOptions {
    pub delta_min: f64,
    pub rank_tol: f64,
}

impl Default for ConeOptions {
    fn default() -> Self {
        ConeOptions {
            delta_min: DELTA_MIN,
            rank_tol: RANK_TOL,
        }
    }
}

struct Rays {
    n: usize,
    kept: Vec<usize>,
    unit: Vec<DVector<f64>>,
    total: usize,
}

fn rays(g: &[DVector<f64>]) -> Result<Rays, ConeError> {
    let first = g.first().ok_or(ConeError::Empty)?;
    let n = first.len();
    let mut kept = Vec::new();
    let mut unit = Vec::new();
    for (index, v) in g.iter().enumerate() {
        if v.len() != n {
            return Err(ConeError::Dimension {
                index,
                expected: n,
                found: v.len(),
            });
        }
        let norm = v.norm();
        if norm >= ZERO_NORM {
            kept.push(index);
            unit.push(v / norm);
        }
    }
    let dropped = g.len() - kept.len();
    if dropped > 0 {
        debug!("cone test dropped {dropped} zero generators");
    }
    Ok(Rays {
        n,
        kept,
        unit,
        total: g.len(),
    })
}

fn normalize_inf(p: DVector<f64>) -> Option<Vec<f64>> {
    let m = p.amax();
    (m > 0.0).then(|| (p / m).as_slice().to_vec())
}

/// Numerical rank (singular values `>= tol·σ_max`) and an orthonormal basis of the span.
pub fn span_rank(g: &[DVector<f64>], tol: f64) -> (usize, Vec<DVector<f64>>) {
    let (rank, u) = svd_left(g, tol);
    let basis = (0..rank).map(|j| u.column(j).into_owned()).collect();
    (rank, basis)
}

/// Rank and the full left singular basis (`n` columns).
fn svd_left(g: &[DVector<f64>], tol: f64) -> (usize, DMatrix<f64>) {
    let n = g.first().map_or(0, |v| v.len());
    if n == 0 {
        return (0, DMatrix::zeros(0, 0));
    }
    let cols = g.len().max(n);
    let mut m = DMatrix::zeros(n, cols);
    for (j, v) in g.iter().enumerate() {
        m.set_column(j, v);
    }
    let svd = m.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = if smax == 0.0 {
        0
    } else {
        svd.singular_values
            .iter()
            .filter(|&&s| s >= tol * smax)
            .count()
    };
    let sorted = DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]);
    (rank, sorted)
}

/// Whether `cone{g_i} = R^n`.
pub fn cone_full(g: &[DVector<f64>]) -> Result<ConeVerdict, ConeError> {
    cone_full_with(g, &ConeOptions::default())
}

pub fn cone_full_with(g: &[DVector<f64>], opts: &ConeOptions) -> Result<ConeVerdict, ConeError> {
    let r = rays(g)?;
    let dropped = r.total - r.kept.len();
    let (rank, u) = svd_left(&r.unit, opts.rank_tol);
    if rank < r.n {
        let p = if r.unit.is_empty() {
            unit_vec(r.n, 0)
        } else {
            normalize_inf(u.column(r.n - 1).into_owned()).unwrap_or_else(|| unit_vec(r.n, 0))
        };
        let polar = if r.unit.is_empty() {
            PolarInterior::Unknown
        } else {
            polar_of_rays(&r, 0.0, opts.delta_min)?
        };
        let p = match &polar {
            PolarInterior::Nonempty { p, .. } => scale_inf(p),
            _ => p,
        };
        return Ok(ConeVerdict {
            status: ConeStatus::NotFull,
            witness: Witness::Covector { p },
            margin: 0.0,
            polar_interior: polar,
            rank,
            dropped,
        });
    }

    let combo = positive_combination(&r)?;
    if let Some((delta, lambda, _)) = combo.as_ref().filter(|c| c.0 > opts.delta_min) {
        let delta = *delta;
        let mut full = vec![0.0; r.total];
        for (w, &i) in lambda.iter().zip(&r.kept) {
            full[i] = *w;
        }
        return Ok(ConeVerdict {
            status: ConeStatus::Full,
            witness: Witness::Weights { lambda: full },
            margin: delta,
            polar_interior: PolarInterior::Empty,
            rank,
            dropped,
        });
    }
    let polar = polar_of_rays(&r, 0.0, opts.delta_min)?;
    let delta = combo.as_ref().map_or(0.0, |c| c.0);
    let (status, p) = match (&polar, combo) {
        (PolarInterior::Nonempty { p, .. }, _) => (ConeStatus::NotFull, scale_inf(p)),
        (_, Some((_, _, y))) => {
            // The LP duals give <y, ĝ_i> >= -δ*; flip to the polar side.
            let p = normalize_inf(-y).unwrap_or_else(|| unit_vec(r.n, 0));
            (ConeStatus::Degenerate, p)
        }
        (_, None) => (ConeStatus::Degenerate, unit_vec(r.n, 0)),
    };
    Ok(ConeVerdict {
        status,
        witness: Witness::Covector { p },
        margin: delta.max(0.0),
        polar_interior: polar,
        rank,
        dropped,
    })
}

fn unit_vec(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

fn scale_inf(p: &[f64]) -> Vec<f64> {
    normalize_inf(DVector::from_column_slice(p)).unwrap_or_else(|| p.to_vec())
}

/// `max δ` s.t. `Σ λ_i ĝ_i = 0`, `Σ λ_i = 1`, `λ_i >= δ`, written with
/// `λ_i = μ_i + δ`, `μ >= 0`. Returns `(δ*, λ, duals of the vector rows)`, or
/// `None` when `0` is not a convex combination of the rays.
#[allow(clippy::type_complexity)]
fn positive_combination(r: &Rays) -> Result<Option<(f64, Vec<f64>, DVector<f64>)>, ConeError> {
    let k = r.unit.len();
    let n = r.n;
    let mut c = vec![0.0; k + 1];
    c[k] = 1.0;
    let mut lp = LinearProgram::maximize(c);
    let sum: DVector<f64> = r.unit.iter().fold(DVector::zeros(n), |acc, v| acc + v);
    for row in 0..n {
        let mut a: Vec<f64> = r.unit.iter().map(|v| v[row]).collect();
        a.push(sum[row]);
        lp.add_eq(a, 0.0);
    }
    let mut a = vec![1.0; k + 1];
    a[k] = k as f64;
    lp.add_eq(a, 1.0);
    let sol = lp.solve()?;
    match sol.status {
        LpStatus::Infeasible => return Ok(None),
        LpStatus::Unbounded => return Err(ConeError::Unexpected(sol.status)),
        LpStatus::Optimal => {}
    }
    let delta = sol.x[k];
    let lambda = sol.x[..k].iter().map(|mu| mu + delta).collect();
    let y = DVector::from_column_slice(&sol.duals_eq[..n]);
    Ok(Some((delta, lambda, y)))
}

/// Whether the polar cone `{p : <p, g_i> <= 0}` has nonempty interior, with
/// margin: `max δ` s.t. `<p, ĝ_i> <= -δ`, `|p|∞ <= 1`; nonempty iff `δ* > margin_req`.
pub fn polar_interior(g: &[DVector<f64>], margin_req: f64) -> Result<PolarInterior, ConeError> {
    let r = rays(g)?;
    if r.unit.is_empty() {
        return Ok(PolarInterior::Unknown);
    }
    polar_of_rays(&r, margin_req, DELTA_MIN)
}

/// Solved through its dual `min |Σ λ_i ĝ_i|₁` s.t. `λ >= 0`, `Σ λ = 1`;
/// the duals of that problem are `(p, δ)`.
fn polar_of_rays(r: &Rays, margin_req: f64, delta_min: f64) -> Result<PolarInterior, ConeError> {
    let (p, delta) = polar_lp(r)?;
    if delta > margin_req.max(delta_min) {
        Ok(PolarInterior::Nonempty {
            p: p.as_slice().to_vec(),
            delta,
        })
    } else {
        Ok(PolarInterior::Empty)
    }
}

fn polar_lp(r: &Rays) -> Result<(DVector<f64>, f64), ConeError> {
    let k = r.unit.len();
    let n = r.n;
    let width = k + 2 * n;
    let c: Vec<f64> = (0..width).map(|j| if j < k { 0.0 } else { 1.0 }).collect();
    let mut lp = LinearProgram::minimize(c);
    for row in 0..n {
        let mut a = vec![0.0; width];
        for (j, v) in r.unit.iter().enumerate() {
            a[j] = v[row];
        }
        a[k + row] = 1.0;
        a[k + n + row] = -1.0;
        lp.add_eq(a, 0.0);
    }
    let mut a = vec![0.0; width];
    a[..k].iter_mut().for_each(|v| *v = 1.0);
    lp.add_eq(a, 1.0);
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(ConeError::Unexpected(sol.status));
    }
    let p = DVector::from_column_slice(&sol.duals_eq[..n]);
    Ok((p, sol.duals_eq[n]))
}

impl ConeVerdict {
    /// Re-check the witness in plain arithmetic; returns the largest violation.
    pub fn witness_violation(&self, g: &[DVector<f64>]) -> f64 {
        let unit: Vec<Option<DVector<f64>>> = g
            .iter()
            .map(|v| {
                let n = v.norm();
                (n >= ZERO_NORM).then(|| v / n)
            })
            .collect();
        let mut worst: f64 = 0.0;
        match &self.witness {
            Witness::Weights { lambda } => {
                let n = g.first().map_or(0, |v| v.len());
                let mut s = DVector::zeros(n);
                let mut total = 0.0;
                for (l, u) in lambda.iter().zip(&unit) {
                    if let Some(u) = u {
                        s += u * *l;
                        total += l;
                        worst = worst.max(self.margin - l);
                    }
                }
                worst = worst.max(s.amax()).max((total - 1.0).abs());
                if self.rank < n {
                    worst = worst.max(1.0);
                }
            }
            Witness::Covector { p } => {
                let p = DVector::from_column_slice(p);
                worst = worst.max((p.amax() - 1.0).abs());
                for u in unit.iter().flatten() {
                    worst = worst.max(p.dot(u));
                }
            }
        }
        if let PolarInterior::Nonempty { p, delta } = &self.polar_interior {
            worst = worst.max(polar_violation(g, p, *delta));
        }
        worst
    }
}

/// Largest violation of `<p, g_i> <= -δ|g_i|`, `|p|∞ <= 1`.
pub fn polar_violation(g: &[DVector<f64>], p: &[f64], delta: f64) -> f64 {
    let p = DVector::from_column_slice(p);
    let mut worst = (p.amax() - 1.0).max(0.0);
    for v in g {
        let n = v.norm();
        if n >= ZERO_NORM {
            worst = worst.max(p.dot(v) / n + delta);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn cross_is_full_with_quarter_margin() {
        let g = [v(&[1.0, 0.0]), v(&[-1.0, 0.0]), v(&[0.0, 1.0]), v(&[0.0, -1.0])];
        let c = cone_full(&g).unwrap();
        assert_eq!(c.status, ConeStatus::Full);
        assert!((c.margin - 0.25).abs() < 1e-12);
        assert!(c.witness_violation(&g) < 1e-12);
        assert_eq!(c.polar_interior, PolarInterior::Empty);
    }

    #[test]
    fn positive_quadrant_is_not_full() {
        let g = [v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let c = cone_full(&g).unwrap();
        assert_eq!(c.status, ConeStatus::NotFull);
        match &c.witness {
            Witness::Covector { p } => {
                assert!((p[0] + 1.0).abs() < 1e-9 && (p[1] + 1.0).abs() < 1e-9, "{p:?}");
            }
            w => panic!("{w:?}"),
        }
        assert!(c.witness_violation(&g) < 1e-12);
    }

    #[test]
    fn half_plane_is_degenerate() {
        let g = [v(&[1.0, 0.0]), v(&[-1.0, 0.0]), v(&[0.0, 1.0])];
        let c = cone_full(&g).unwrap();
        assert_eq!(c.status, ConeStatus::Degenerate);
        match &c.witness {
            Witness::Covector { p } => assert!(p[0].abs() < 1e-9 && (p[1] + 1.0).abs() < 1e-9),
            w => panic!("{w:?}"),
        }
        assert!(c.witness_violation(&g) < 1e-9);
    }

    #[test]
    fn rank_deficient_gives_orthogonal_witness() {
        let g = [v(&[1.0, 0.0, 0.0]), v(&[-1.0, 0.0, 0.0])];
        let c = cone_full(&g).unwrap();
        assert_eq!(c.status, ConeStatus::NotFull);
        assert_eq!(c.rank, 1);
        assert!(c.witness_violation(&g) < 1e-12);
    }

    #[test]
    fn zeros_are_dropped() {
        let g = [v(&[0.0]), v(&[1.0]), v(&[-2.0]), v(&[1e-14])];
        let c = cone_full(&g).unwrap();
        assert_eq!(c.status, ConeStatus::Full);
        assert_eq!(c.dropped, 2);
        assert!(c.witness_violation(&g) < 1e-12);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(cone_full(&[]).unwrap_err(), ConeError::Empty);
    }

    #[test]
    fn polar_examples() {
        match polar_interior(&[v(&[1.0])], 0.0).unwrap() {
            PolarInterior::Nonempty { p, delta } => {
                assert!((p[0] + 1.0).abs() < 1e-12);
                assert!((delta - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            polar_interior(&[v(&[1.0]), v(&[-1.0])], 0.0).unwrap(),
            PolarInterior::Empty
        );
        // Margin requirement above the achievable δ.
        assert_eq!(polar_interior(&[v(&[1.0])], 1.5).unwrap(), PolarInterior::Empty);
    }

    #[test]
    fn span_rank_examples() {
        assert_eq!(span_rank(&[v(&[1.0, 0.0]), v(&[2.0, 0.0])], RANK_TOL).0, 1);
        assert_eq!(span_rank(&[v(&[0.0])], RANK_TOL).0, 0);
        let (r, basis) = span_rank(&[v(&[1.0, 1.0, 0.0]), v(&[1.0, -1.0, 0.0])], RANK_TOL);
        assert_eq!(r, 2);
        for b in &basis {
            assert!(b[2].abs() < 1e-12);
            assert!((b.norm() - 1.0).abs() < 1e-12);
        }
    }

    /// Full iff every direction on a fine circle has some generator strictly in front.
    fn sweep_full(g: &[DVector<f64>]) -> Option<bool> {
        let mut min_best = f64::INFINITY;
        for j in 0..4096 {
            let a = 2.0 * PI * j as f64 / 4096.0;
            let p = v(&[a.cos(), a.sin()]);
            let best = g
                .iter()
                .map(|x| p.dot(&(x / x.norm())))
                .fold(f64::NEG_INFINITY, f64::max);
            min_best = min_best.min(best);
        }
        // Skip instances too close to the boundary for the sweep to resolve.
        if min_best.abs() < 1e-3 {
            None
        } else {
            Some(min_best > 0.0)
        }
    }

    fn planar_set() -> impl Strategy<Value = Vec<DVector<f64>>> {
        prop::collection::vec((0.0f64..2.0 * PI, 0.1f64..3.0), 1..8)
            .prop_map(|xs| xs.into_iter().map(|(a, r)| v(&[r * a.cos(), r * a.sin()])).collect())
    }

    fn any_set() -> impl Strategy<Value = Vec<DVector<f64>>> {
        (1usize..5).prop_flat_map(|n| {
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), 1..12)
                .prop_map(|g| g.into_iter().map(DVector::from_vec).collect())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn agrees_with_angular_sweep(g in planar_set()) {
            if let Some(full) = sweep_full(&g) {
                let c = cone_full(&g).unwrap();
                prop_assert_eq!(c.status == ConeStatus::Full, full, "{:?}", c);
            }
        }

        #[test]
        fn full_and_polar_interior_exclude_each_other(g in any_set()) {
            let c = cone_full(&g).unwrap();
            let p = polar_interior(&g, 0.0).unwrap();
            prop_assert!(!(c.status == ConeStatus::Full && p.is_nonempty()));
        }

        #[test]
        fn witnesses_recheck(g in any_set()) {
            let c = cone_full(&g).unwrap();
            prop_assert!(c.witness_violation(&g) <= 1e-9, "{:?}", c);
            if let PolarInterior::Nonempty { p, delta } = polar_interior(&g, 0.0).unwrap() {
                prop_assert!(polar_violation(&g, &p, delta) <= 1e-9);
            }
        }

        #[test]
        fn status_is_scale_invariant(
            g in any_set(),
            scales in prop::collection::vec(0.01f64..100.0, 12),
        ) {
            let scaled: Vec<DVector<f64>> = g.iter().zip(&scales).map(|(x, s)| x * *s).collect();
            prop_assert_eq!(cone_full(&g).unwrap().status, cone_full(&scaled).unwrap().status);
        }
    }
}

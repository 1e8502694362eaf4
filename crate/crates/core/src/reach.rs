//! Monte-Carlo probe of the accessible set under piecewise-constant admissible controls.

use std::io::{self, Write};

use log::warn;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{cone_full, ConeError, ConeStatus};
use crate::flow::{flow_controlled, period, ControlSchedule, FlowError};
use crate::ode::OdeOptions;
use crate::system::{ControlSet, ProjectionSpec, SystemDef};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReachError {
    #[error("at least one sample is required")]
    NoSamples,
    #[error("horizon must be positive, got {0}")]
    Horizon(f64),
    #[error("every sample failed to integrate")]
    AllFailed,
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cone(#[from] ConeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct McOptions {
    /// Control intervals per period (or over the whole horizon without a period).
    pub intervals_per_period: usize,
    pub projection: Option<ProjectionSpec>,
    pub ode: OdeOptions,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            intervals_per_period: 16,
            projection: None,
            ode: OdeOptions::default(),
        }
    }
}

/// Where the start point sits relative to the convex hull of the endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HullPosition {
    Interior,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSummary {
    pub position: HullPosition,
    /// Margin of the positive-combination LP on `endpoint - start`.
    pub margin: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachCloud {
    pub start: Vec<f64>,
    pub seed: u64,
    pub breaks: Vec<f64>,
    pub projection: Option<ProjectionSpec>,
    /// Full endpoint states, in sample order.
    pub endpoints: Vec<Vec<f64>>,
    /// Control values per sample, one entry per interval.
    pub controls: Vec<Vec<Vec<f64>>>,
    /// Sample indices kept (failures are skipped).
    pub indices: Vec<usize>,
    pub failures: usize,
    pub hull: HullSummary,
}

fn draw_mixture(gens: &[DVector<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = &gens[rng.random_range(0..gens.len())];
    let b = &gens[rng.random_range(0..gens.len())];
    let w: f64 = rng.random();
    (a * w + b * (1.0 - w)).as_slice().to_vec()
}

/// Per-interval controls for one sample: either an independent two-generator
/// mixture on every interval, or the generator maximising a random
/// first-order trigonometric score in the phase.
fn draw_controls(gens: &[DVector<f64>], phases: &[f64], rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if rng.random::<bool>() {
        return phases.iter().map(|_| draw_mixture(gens, rng)).collect();
    }
    let m = gens[0].len();
    let mut coeff = || DVector::<f64>::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    let (c0, c1, c2) = (coeff(), coeff(), coeff());
    phases
        .iter()
        .map(|s| {
            let score = &c0 + &c1 * s.cos() + &c2 * s.sin();
            gens.iter()
                .max_by(|a, b| score.dot(a).total_cmp(&score.dot(b)))
                .expect("control sets have generators")
                .as_slice()
                .to_vec()
        })
        .collect()
}

fn project(proj: Option<&ProjectionSpec>, x: &[f64]) -> Vec<f64> {
    match proj {
        Some(p) => p.keep.iter().map(|&i| x[i]).collect(),
        None => x.to_vec(),
    }
}

/// Sample `samples` admissible piecewise-constant controls over `[0, horizon]`
/// and record the endpoints. Sample `i` draws from its own ChaCha stream, so the
/// result is independent of thread count.
pub fn mc_reach(
    sys: &SystemDef,
    u: &ControlSet,
    x0: &[f64],
    horizon: f64,
    samples: usize,
    seed: u64,
    opts: &McOptions,
) -> Result<ReachCloud, ReachError> {
    if samples == 0 {
        return Err(ReachError::NoSamples);
    }
    if !(horizon > 0.0) {
        return Err(ReachError::Horizon(horizon));
    }
    let k = opts.intervals_per_period.max(1);
    let intervals = match period(sys, x0) {
        Ok(t) => ((k as f64 * horizon / t).round() as usize).max(1),
        Err(FlowError::Dimension { expected, found }) => {
            return Err(FlowError::Dimension { expected, found }.into())
        }
        Err(_) => k,
    };
    let breaks: Vec<f64> = (0..=intervals)
        .map(|j| if j == intervals { horizon } else { horizon * j as f64 / intervals as f64 })
        .collect();
    let gens = u.generators();
    let cycle = period(sys, x0).unwrap_or(horizon);
    let phases: Vec<f64> = breaks
        .windows(2)
        .map(|w| std::f64::consts::TAU * 0.5 * (w[0] + w[1]) / cycle)
        .collect();
    let results: Vec<(usize, Result<(Vec<f64>, Vec<Vec<f64>>), FlowError>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let values = draw_controls(&gens, &phases, &mut rng);
            let run = ControlSchedule::new(breaks.clone(), values.clone())
                .and_then(|s| flow_controlled(sys, x0, &s, opts.ode))
                .map(|path| (path.end().to_vec(), values));
            (i, run)
        })
        .collect();
    let mut endpoints = Vec::new();
    let mut controls = Vec::new();
    let mut indices = Vec::new();
    let mut failures = 0;
    for (i, r) in results {
        match r {
            Ok((end, values)) => {
                endpoints.push(end);
                controls.push(values);
                indices.push(i);
            }
            Err(e) => {
                warn!("sample {i} skipped: {e}");
                failures += 1;
            }
        }
    }
    if endpoints.is_empty() {
        return Err(ReachError::AllFailed);
    }
    let hull = hull_summary(x0, &endpoints, opts.projection.as_ref())?;
    Ok(ReachCloud {
        start: x0.to_vec(),
        seed,
        breaks,
        projection: opts.projection.clone(),
        endpoints,
        controls,
        indices,
        failures,
        hull,
    })
}

/// Start strictly inside the hull of the endpoints iff `cone{e_i - s}` is the whole space.
pub fn hull_summary(
    start: &[f64],
    endpoints: &[Vec<f64>],
    proj: Option<&ProjectionSpec>,
) -> Result<HullSummary, ReachError> {
    let s = DVector::from_vec(project(proj, start));
    let diffs: Vec<DVector<f64>> = endpoints
        .iter()
        .map(|e| DVector::from_vec(project(proj, e)) - &s)
        .collect();
    let v = cone_full(&diffs)?;
    let position = match v.status {
        ConeStatus::Full => HullPosition::Interior,
        ConeStatus::Degenerate => HullPosition::Boundary,
        ConeStatus::NotFull => HullPosition::Outside,
    };
    Ok(HullSummary {
        position,
        margin: v.margin,
        rank: v.rank,
    })
}

impl ReachCloud {
    pub fn projected(&self) -> Vec<Vec<f64>> {
        self.endpoints
            .iter()
            .map(|e| project(self.projection.as_ref(), e))
            .collect()
    }

    /// Largest sup-norm gap between each stored endpoint and a fresh
    /// integration of its stored control at tighter tolerance.
    pub fn reintegration_residual(&self, sys: &SystemDef, opts: OdeOptions) -> Result<f64, ReachError> {
        let tight = OdeOptions {
            rtol: opts.rtol / 10.0,
            atol: opts.atol / 10.0,
            ..opts
        };
        let worst = self
            .controls
            .par_iter()
            .zip(&self.endpoints)
            .map(|(values, end)| {
                let s = ControlSchedule::new(self.breaks.clone(), values.clone())?;
                let path = flow_controlled(sys, &self.start, &s, tight)?;
                Ok(path
                    .end()
                    .iter()
                    .zip(end)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max))
            })
            .collect::<Result<Vec<f64>, FlowError>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    }

    /// CSV with header `sample,coord0,...` over the (projected) endpoints.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let pts = self.projected();
        let n = pts.first().map_or(0, Vec::len);
        write!(w, "sample")?;
        for i in 0..n {
            write!(w, ",coord{i}")?;
        }
        writeln!(w)?;
        for (i, p) in self.indices.iter().zip(&pts) {
            write!(w, "{i}")?;
            for c in p {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

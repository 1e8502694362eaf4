//! Certificates for the cone sufficient conditions, the polar-cone obstructions
//! and the Lie-bracket cross-checks.

use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{cone_full, polar_interior, span_rank, ConeError, ConeStatus, ConeVerdict, PolarInterior, Witness, RANK_TOL, ZERO_NORM};
use crate::expr::{ExprError, VectorField};
use crate::flow::{period, sample_e, FlowError, SampleProjection, TangentSample};
use crate::ode::OdeOptions;
use crate::system::{validate, ControlSet, Diagnostic, ProjectionSpec, SystemDef};

pub const MAX_BRACKET_DEPTH: usize = 6;
/// Largest admissible value of `max_j h_U(M_jᵀ p)` for an obstruction witness.
pub const SUPPORT_TOL: f64 = 1e-12;
pub const WITNESS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("bracket depth {depth} exceeds the limit {MAX_BRACKET_DEPTH}")]
    DepthExceeded { depth: usize },
    #[error("point has dimension {found}, system has {expected}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremTag {
    #[serde(rename = "Thm2.1-global")]
    Global,
    #[serde(rename = "Thm2.3-I")]
    Local,
    #[serde(rename = "Thm2.3-II")]
    LocalProjected,
    #[serde(rename = "Thm2.6-I")]
    OnePeriod,
    #[serde(rename = "Thm2.6-II")]
    OnePeriodProjected,
    #[serde(rename = "Obstruction-2.5")]
    ObstructionAlong,
    #[serde(rename = "Obstruction-2.6")]
    ObstructionOrbital,
    #[serde(rename = "Bonnard-1.8")]
    BracketGenerating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    SufficientMet,
    Obstructed,
    Inconclusive,
    AssumptionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SufficientMode {
    /// Cone of `E^U_{[0,tf]}(x)` is the whole tangent space.
    Local { tf: f64 },
    /// Same after `(π ∘ exp(tf X0))'`.
    LocalProjected { tf: f64, proj: ProjectionSpec },
    /// Cone of `E^U(x)` over one period.
    OnePeriod,
    /// Cone of `π'(x) E^U(x)` over one period.
    OnePeriodProjected { proj: ProjectionSpec },
}

impl SufficientMode {
    pub fn tag(&self) -> TheoremTag {
        match self {
            SufficientMode::Local { .. } => TheoremTag::Local,
            SufficientMode::LocalProjected { .. } => TheoremTag::LocalProjected,
            SufficientMode::OnePeriod => TheoremTag::OnePeriod,
            SufficientMode::OnePeriodProjected { .. } => TheoremTag::OnePeriodProjected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObstructionMode {
    /// Along the drift solution on `[0, tf]`, optionally projected after the flow.
    Along {
        tf: f64,
        proj: Option<ProjectionSpec>,
    },
    /// Around the periodic orbit, on `π'(x) E^U(x)`.
    Orbital { proj: ProjectionSpec },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub min_steps: usize,
    pub max_steps: usize,
    /// Number of equal consecutive verdicts that ends the refinement.
    pub stable_runs: usize,
    pub ode: OdeOptions,
    pub timings: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            min_steps: 16,
            max_steps: 1024,
            stable_runs: 3,
            ode: OdeOptions::default(),
            timings: false,
        }
    }
}

/// Machine-readable reasons attached to a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum Note {
    Invalid { diagnostic: Diagnostic },
    NoPeriod { reason: String },
    /// Sufficient conditions are one-directional; failure says nothing.
    NotNecessary,
    /// The cone is a closed half-space `{<normal, v> >= 0}` and its polar is a half line.
    HalfSpace { normal: Vec<f64> },
    NotFull { rank: usize },
    PolarEmpty,
    IndependenceFailed { t: f64, rank: usize, m: usize },
    RigorNotMet { delta: f64, bound: f64, steps: usize },
    SupportPositive { value: f64 },
    WitnessRejected { violation: f64 },
    Unstable { steps: usize },
    PoissonNotAsserted,
    PoissonAsserted,
    NotBracketGenerating { point: Vec<f64>, rank: usize, dim: usize },
    ZeroNotInterior,
    QueryPointsOnly { count: usize },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Margins {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cone: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub polar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rigor_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub independence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness_residual: Option<f64>,
}

/// Sampled-to-continuous bound for a polar witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rigor {
    pub delta: f64,
    pub lipschitz: f64,
    pub step: f64,
    pub bound: f64,
    pub covered: bool,
    /// `max_j h_U(M_jᵀ p)` over the grid.
    pub support_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Independence {
    pub passed: bool,
    /// Smallest singular value of the (projected) control matrix over the grid.
    pub min_singular: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_at: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointVerdict {
    pub point: Vec<f64>,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cone: Option<ConeStatus>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rigor: Option<Rigor>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub independence: Option<Independence>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub brackets: Vec<BracketFamilyReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub points: Vec<PointVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub scenario: String,
    pub theorem: TheoremTag,
    pub status: Status,
    pub point: Vec<f64>,
    pub witness: Option<Witness>,
    pub margins: Margins,
    /// τ-step counts visited by the refinement.
    pub grids: Vec<usize>,
    pub evidence: Evidence,
    pub notes: Vec<Note>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<Timings>,
}

impl Certificate {
    fn new(sys: &SystemDef, theorem: TheoremTag, x: &[f64]) -> Self {
        Certificate {
            scenario: sys.name.clone(),
            theorem,
            status: Status::Inconclusive,
            point: x.to_vec(),
            witness: None,
            margins: Margins::default(),
            grids: Vec::new(),
            evidence: Evidence::default(),
            notes: Vec::new(),
            timings: None,
        }
    }

    fn finish(mut self, start: Instant, opts: &CertifyOptions) -> Self {
        if opts.timings {
            self.timings = Some(Timings {
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            });
        }
        info!("{} {:?} at {:?}: {:?}", self.scenario, self.theorem, self.point, self.status);
        self
    }
}

fn check_point(sys: &SystemDef, x: &[f64]) -> Result<(), CertifyError> {
    if x.len() != sys.dim() {
        return Err(CertifyError::Dimension {
            expected: sys.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Dyadic refinement: evaluate at `min_steps, 2·min_steps, ...` until the last
/// `stable_runs` keys agree and `settled` holds, or the cap is reached (then two
/// agreeing keys suffice). Returns the visited grids, the last result and
/// whether it is stable.
fn refine<T>(
    opts: &CertifyOptions,
    mut run: impl FnMut(usize) -> Result<T, CertifyError>,
    key: impl Fn(&T) -> u8,
    settled: impl Fn(&T) -> bool,
) -> Result<(Vec<usize>, T, bool), CertifyError> {
    let mut grids = Vec::new();
    let mut keys = Vec::new();
    let mut steps = opts.min_steps.max(2);
    loop {
        let r = run(steps)?;
        grids.push(steps);
        keys.push(key(&r));
        debug!("refine: {steps} steps, key {}", keys[keys.len() - 1]);
        let need = opts.stable_runs.max(2);
        let tail_equal = |n: usize| keys.len() >= n && keys[keys.len() - n..].iter().all(|k| *k == keys[keys.len() - 1]);
        if tail_equal(need) && settled(&r) {
            return Ok((grids, r, true));
        }
        if steps * 2 > opts.max_steps {
            let stable = tail_equal(2);
            return Ok((grids, r, stable));
        }
        steps *= 2;
    }
}

fn sample_window(
    sys: &SystemDef,
    x: &[f64],
    tf_or_period: Option<f64>,
) -> Result<(f64, f64), Note> {
    match tf_or_period {
        Some(tf) => Ok((0.0, tf)),
        None => period(sys, x)
            .map(|t| (0.0, t))
            .map_err(|e| Note::NoPeriod { reason: e.to_string() }),
    }
}

/// Cone sufficient conditions with dyadic τ-grid refinement.
pub fn check_sufficient(
    sys: &SystemDef,
    u: &ControlSet,
    x: &[f64],
    mode: &SufficientMode,
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let start = Instant::now();
    check_point(sys, x)?;
    let mut cert = Certificate::new(sys, mode.tag(), x);
    let diags = validate(sys, u);
    if !diags.is_empty() {
        cert.status = Status::AssumptionFailed;
        cert.notes = diags.into_iter().map(|diagnostic| Note::Invalid { diagnostic }).collect();
        return Ok(cert.finish(start, opts));
    }
    let (horizon, projection) = match mode {
        SufficientMode::Local { tf } => (Some(*tf), SampleProjection::None),
        SufficientMode::LocalProjected { tf, proj } => (
            Some(*tf),
            SampleProjection::AfterFlow {
                tf: *tf,
                proj: proj.clone(),
            },
        ),
        SufficientMode::OnePeriod => (None, SampleProjection::None),
        SufficientMode::OnePeriodProjected { proj } => (None, SampleProjection::Truncate { proj: proj.clone() }),
    };
    let (t1, t2) = match sample_window(sys, x, horizon) {
        Ok(w) => w,
        Err(note) => {
            cert.status = Status::AssumptionFailed;
            cert.notes.push(note);
            return Ok(cert.finish(start, opts));
        }
    };
    let (grids, (sample, verdict), stable) = refine(
        opts,
        |steps| {
            let s = sample_e(sys, u, x, t1, t2, steps, &projection, opts.ode)?;
            let v = cone_full(&s.vecs())?;
            Ok((s, v))
        },
        |(_, v)| v.status as u8,
        |_| true,
    )?;
    cert.grids = grids;
    cert.evidence.cone = Some(verdict.status);
    cert.evidence.rank = Some(verdict.rank);
    cert.margins.cone = Some(verdict.margin);
    if !stable {
        cert.notes.push(Note::Unstable {
            steps: *cert.grids.last().expect("at least one grid"),
        });
        cert.witness = Some(verdict.witness);
        return Ok(cert.finish(start, opts));
    }
    match verdict.status {
        ConeStatus::Full => {
            let violation = verdict.witness_violation(&sample.vecs());
            cert.margins.witness_residual = Some(violation);
            if violation <= WITNESS_TOL {
                cert.status = Status::SufficientMet;
            } else {
                cert.notes.push(Note::WitnessRejected { violation });
            }
        }
        ConeStatus::NotFull => {
            cert.notes.push(Note::NotFull { rank: verdict.rank });
            cert.notes.push(Note::NotNecessary);
        }
        ConeStatus::Degenerate => {
            if let Witness::Covector { p } = &verdict.witness {
                cert.notes.push(Note::HalfSpace {
                    normal: p.iter().map(|c| -c).collect(),
                });
            }
            cert.notes.push(Note::NotNecessary);
        }
    }
    cert.witness = Some(verdict.witness);
    Ok(cert.finish(start, opts))
}

/// Rank condition on the projected control fields along the sampled solution.
fn independence(sys: &SystemDef, sample: &TangentSample, proj: Option<&ProjectionSpec>) -> Result<Independence, CertifyError> {
    let m = sys.inputs();
    let p = proj.map(|p| p.matrix(sys.dim()));
    let mut min_singular = f64::INFINITY;
    for (tau, state) in sample.taus.iter().zip(&sample.states) {
        let b = sys.control_matrix(state.as_slice())?;
        let b = match &p {
            Some(p) => p * b,
            None => b,
        };
        let cols: Vec<DVector<f64>> = b.column_iter().map(|c| c.into_owned()).collect();
        let (rank, _) = span_rank(&cols, RANK_TOL);
        let sv = if b.nrows() >= m {
            b.clone().svd(false, false).singular_values.min()
        } else {
            0.0
        };
        min_singular = min_singular.min(sv);
        if rank < m {
            return Ok(Independence {
                passed: false,
                min_singular,
                failed_at: Some(*tau),
            });
        }
    }
    Ok(Independence {
        passed: true,
        min_singular,
        failed_at: None,
    })
}

/// Lipschitz estimate for the unit rays `τ ↦ v̂(τ)` and exact support of the
/// witness over `U` on the grid.
fn rigor(
    sys: &SystemDef,
    u: &ControlSet,
    sample: &TangentSample,
    brackets: &[VectorField],
    p: &[f64],
    delta: f64,
) -> Result<Rigor, CertifyError> {
    let n = sample.dim();
    let gens = u.generators();
    let mut lipschitz: f64 = 0.0;
    let mut support_max = f64::NEG_INFINITY;
    let pv = DVector::from_column_slice(p);
    for ((frame, state), map) in sample.frames.iter().zip(&sample.states).zip(&sample.maps) {
        let mut c = DMatrix::zeros(sys.dim(), sys.inputs());
        for (k, f) in brackets.iter().enumerate() {
            c.set_column(k, &f.eval(state.as_slice())?);
        }
        let dmap = frame * c;
        for g in &gens {
            let v = map * g;
            let norm = v.norm();
            if norm < ZERO_NORM {
                continue;
            }
            lipschitz = lipschitz.max((&dmap * g).norm() / norm);
        }
        let h = u.support((map.transpose() * &pv).as_slice());
        support_max = support_max.max(h);
    }
    let step = ((sample.t2 - sample.t1) / sample.steps.max(1) as f64).abs();
    let bound = (n as f64).sqrt() * lipschitz * step / 2.0;
    Ok(Rigor {
        delta,
        lipschitz,
        step,
        bound,
        covered: delta >= bound,
        support_max,
    })
}

/// Polar-cone obstruction with rigor margin and the independence check.
pub fn check_obstruction(
    sys: &SystemDef,
    u: &ControlSet,
    x: &[f64],
    mode: &ObstructionMode,
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let start = Instant::now();
    check_point(sys, x)?;
    let tag = match mode {
        ObstructionMode::Along { .. } => TheoremTag::ObstructionAlong,
        ObstructionMode::Orbital { .. } => TheoremTag::ObstructionOrbital,
    };
    let mut cert = Certificate::new(sys, tag, x);
    let diags = validate(sys, u);
    if !diags.is_empty() {
        cert.status = Status::AssumptionFailed;
        cert.notes = diags.into_iter().map(|diagnostic| Note::Invalid { diagnostic }).collect();
        return Ok(cert.finish(start, opts));
    }
    let (horizon, projection, pi) = match mode {
        ObstructionMode::Along { tf, proj: None } => (Some(*tf), SampleProjection::None, None),
        ObstructionMode::Along { tf, proj: Some(p) } => (
            Some(*tf),
            SampleProjection::AfterFlow {
                tf: *tf,
                proj: p.clone(),
            },
            Some(p),
        ),
        ObstructionMode::Orbital { proj } => (None, SampleProjection::Truncate { proj: proj.clone() }, Some(proj)),
    };
    let (t1, t2) = match sample_window(sys, x, horizon) {
        Ok(w) => w,
        Err(note) => {
            cert.status = Status::AssumptionFailed;
            cert.notes.push(note);
            return Ok(cert.finish(start, opts));
        }
    };
    let brackets = sys
        .controls
        .iter()
        .map(|xk| sys.drift.bracket(xk))
        .collect::<Result<Vec<_>, _>>()?;

    struct Level {
        sample: TangentSample,
        polar: PolarInterior,
        rigor: Option<Rigor>,
    }
    let key = |l: &Level| match (&l.polar, &l.rigor) {
        (PolarInterior::Nonempty { .. }, Some(r)) if r.covered && r.support_max <= SUPPORT_TOL => 2,
        (PolarInterior::Nonempty { .. }, _) => 1,
        _ => 0,
    };
    let (grids, level, stable) = refine(
        opts,
        |steps| {
            let sample = sample_e(sys, u, x, t1, t2, steps, &projection, opts.ode)?;
            let polar = polar_interior(&sample.vecs(), 0.0)?;
            let rigor = match &polar {
                PolarInterior::Nonempty { p, delta } => Some(rigor(sys, u, &sample, &brackets, p, *delta)?),
                _ => None,
            };
            Ok(Level { sample, polar, rigor })
        },
        key,
        |l| key(l) != 1,
    )?;
    cert.grids = grids;
    let indep = independence(sys, &level.sample, pi)?;
    cert.margins.independence = Some(indep.min_singular);
    let indep_ok = indep.passed;
    if let Some(t) = indep.failed_at {
        let b = sys.control_matrix(level.sample.states[0].as_slice())?;
        let cols: Vec<DVector<f64>> = b.column_iter().map(|c| c.into_owned()).collect();
        cert.notes.push(Note::IndependenceFailed {
            t,
            rank: span_rank(&cols, RANK_TOL).0,
            m: sys.inputs(),
        });
    }
    cert.evidence.independence = Some(indep);
    match &level.polar {
        PolarInterior::Nonempty { p, delta } => {
            cert.margins.polar = Some(*delta);
            cert.witness = Some(Witness::Covector { p: p.clone() });
        }
        _ => cert.notes.push(Note::PolarEmpty),
    }
    if let Some(r) = &level.rigor {
        cert.margins.rigor_bound = Some(r.bound);
        if !r.covered {
            cert.notes.push(Note::RigorNotMet {
                delta: r.delta,
                bound: r.bound,
                steps: level.sample.steps,
            });
        }
        if r.support_max > SUPPORT_TOL {
            cert.notes.push(Note::SupportPositive { value: r.support_max });
        }
    }
    cert.evidence.rigor = level.rigor.clone();
    if !stable {
        cert.notes.push(Note::Unstable {
            steps: level.sample.steps,
        });
    }
    cert.status = if !indep_ok {
        Status::AssumptionFailed
    } else if stable && key(&level) == 2 {
        Status::Obstructed
    } else {
        Status::Inconclusive
    };
    Ok(cert.finish(start, opts))
}

/// Outcome of running both the one-period projected sufficient test and the
/// orbital obstruction at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub status: Status,
    pub sufficient: Certificate,
    pub obstruction: Certificate,
}

/// Classify a point of a periodic system using the default projection.
pub fn phase(sys: &SystemDef, u: &ControlSet, x: &[f64], opts: &CertifyOptions) -> Result<Phase, CertifyError> {
    let proj = sys.default_projection();
    let sufficient = check_sufficient(sys, u, x, &SufficientMode::OnePeriodProjected { proj: proj.clone() }, opts)?;
    let obstruction = check_obstruction(sys, u, x, &ObstructionMode::Orbital { proj }, opts)?;
    let status = match (sufficient.status, obstruction.status) {
        (Status::SufficientMet, _) => Status::SufficientMet,
        (_, Status::Obstructed) => Status::Obstructed,
        (Status::AssumptionFailed, _) => Status::AssumptionFailed,
        _ => Status::Inconclusive,
    };
    Ok(Phase {
        status,
        sufficient,
        obstruction,
    })
}

/// The global condition, evaluated at the given query points only.
pub fn check_global(
    sys: &SystemDef,
    u: &ControlSet,
    points: &[Vec<f64>],
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let start = Instant::now();
    let mut cert = Certificate::new(sys, TheoremTag::Global, points.first().map_or(&[][..], |p| p.as_slice()));
    let proj = sys.default_projection();
    let mode = SufficientMode::OnePeriodProjected { proj };
    let mut all = true;
    for x in points {
        let c = check_sufficient(sys, u, x, &mode, opts)?;
        all &= c.status == Status::SufficientMet;
        if c.status == Status::AssumptionFailed {
            cert.status = Status::AssumptionFailed;
            cert.notes.extend(c.notes.clone());
        }
        cert.grids.extend(c.grids.iter().copied());
        cert.evidence.points.push(PointVerdict {
            point: x.clone(),
            status: c.status,
            margin: c.margins.cone,
        });
    }
    cert.grids.sort_unstable();
    cert.grids.dedup();
    cert.notes.push(Note::QueryPointsOnly { count: points.len() });
    if cert.status != Status::AssumptionFailed {
        cert.status = if all && !points.is_empty() {
            Status::SufficientMet
        } else {
            Status::Inconclusive
        };
    }
    cert.margins.cone = cert
        .evidence
        .points
        .iter()
        .filter_map(|p| p.margin)
        .min_by(f64::total_cmp);
    Ok(cert.finish(start, opts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BracketFamily {
    /// `{ad^j_{X0} X^k}`.
    #[serde(rename = "F0")]
    DriftAdjoint,
    /// Iterated brackets of `X0, ..., Xm`.
    #[serde(rename = "LARC")]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRank {
    pub point: Vec<f64>,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketFamilyReport {
    pub family: BracketFamily,
    pub depth: usize,
    pub ranks: Vec<PointRank>,
    /// Labels of a greedy basis at the first point.
    pub basis: Vec<String>,
    pub size: usize,
}

/// The labelled fields of a bracket family.
pub fn bracket_fields(
    sys: &SystemDef,
    family: BracketFamily,
    depth: usize,
) -> Result<Vec<(String, VectorField)>, CertifyError> {
    if depth > MAX_BRACKET_DEPTH {
        return Err(CertifyError::DepthExceeded { depth });
    }
    let mut out: Vec<(String, VectorField)> = Vec::new();
    let push = |out: &mut Vec<(String, VectorField)>, label: String, f: VectorField| {
        if !f.is_zero() && !out.iter().any(|(_, g)| *g == f) {
            out.push((label, f));
        }
    };
    match family {
        BracketFamily::DriftAdjoint => {
            for (k, xk) in sys.controls.iter().enumerate() {
                let mut label = format!("X{}", k + 1);
                let mut f = xk.clone();
                push(&mut out, label.clone(), f.clone());
                for _ in 0..depth {
                    f = sys.drift.bracket(&f)?;
                    label = format!("[X0,{label}]");
                    if f.is_zero() {
                        break;
                    }
                    push(&mut out, label.clone(), f.clone());
                }
            }
        }
        BracketFamily::Full => {
            let base: Vec<(String, VectorField)> = std::iter::once(("X0".to_string(), sys.drift.clone()))
                .chain(sys.controls.iter().enumerate().map(|(k, f)| (format!("X{}", k + 1), f.clone())))
                .collect();
            let mut level: Vec<(String, VectorField)> = Vec::new();
            for (l, f) in &base {
                push(&mut out, l.clone(), f.clone());
                if !f.is_zero() {
                    level.push((l.clone(), f.clone()));
                }
            }
            for _ in 1..depth.max(1) {
                let mut next = Vec::new();
                for (bl, b) in &base {
                    for (yl, y) in &level {
                        if bl == yl {
                            continue;
                        }
                        let z = b.bracket(y)?;
                        if z.is_zero() || out.iter().any(|(_, g)| *g == z) {
                            continue;
                        }
                        let label = format!("[{bl},{yl}]");
                        out.push((label.clone(), z.clone()));
                        next.push((label, z));
                    }
                }
                level = next;
            }
        }
    }
    Ok(out)
}

/// Rank of a bracket family at the query points, optionally after projection.
pub fn bracket_family(
    sys: &SystemDef,
    family: BracketFamily,
    depth: usize,
    points: &[Vec<f64>],
    proj: Option<&ProjectionSpec>,
) -> Result<BracketFamilyReport, CertifyError> {
    let fields = bracket_fields(sys, family, depth)?;
    let mut ranks = Vec::with_capacity(points.len());
    let mut basis = Vec::new();
    for (i, x) in points.iter().enumerate() {
        check_point(sys, x)?;
        let vecs = fields
            .iter()
            .map(|(_, f)| {
                let v = f.eval(x)?;
                Ok(match proj {
                    Some(p) => p.apply(&v),
                    None => v,
                })
            })
            .collect::<Result<Vec<_>, ExprError>>()?;
        let rank = if vecs.is_empty() { 0 } else { span_rank(&vecs, RANK_TOL).0 };
        if i == 0 {
            let mut chosen: Vec<DVector<f64>> = Vec::new();
            for ((label, _), v) in fields.iter().zip(&vecs) {
                chosen.push(v.clone());
                if span_rank(&chosen, RANK_TOL).0 == chosen.len() {
                    basis.push(label.clone());
                } else {
                    chosen.pop();
                }
            }
        }
        ranks.push(PointRank {
            point: x.clone(),
            rank,
        });
    }
    Ok(BracketFamilyReport {
        family,
        depth,
        ranks,
        basis,
        size: fields.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub sample_rank: usize,
    pub family_rank: usize,
    pub agree: bool,
    pub sample_basis: Vec<Vec<f64>>,
    pub family_basis: Vec<String>,
}

/// Compare the span of sampled transported directions with the rank of the
/// drift-adjoint family at `x`; disagreement points to a bug.
#[allow(clippy::too_many_arguments)]
pub fn span_consistency(
    sys: &SystemDef,
    u: &ControlSet,
    x: &[f64],
    t1: f64,
    t2: f64,
    depth: usize,
    proj: Option<&ProjectionSpec>,
    opts: &CertifyOptions,
) -> Result<SpanReport, CertifyError> {
    check_point(sys, x)?;
    let projection = match proj {
        Some(p) => SampleProjection::Truncate { proj: p.clone() },
        None => SampleProjection::None,
    };
    let sample = sample_e(sys, u, x, t1, t2, opts.min_steps.max(2) * 4, &projection, opts.ode)?;
    let vecs = sample.vecs();
    let (sample_rank, basis) = if vecs.is_empty() { (0, Vec::new()) } else { span_rank(&vecs, RANK_TOL) };
    let family = bracket_family(sys, BracketFamily::DriftAdjoint, depth, &[x.to_vec()], proj)?;
    let family_rank = family.ranks[0].rank;
    Ok(SpanReport {
        sample_rank,
        family_rank,
        agree: sample_rank == family_rank,
        sample_basis: basis.iter().take(sample_rank).map(|b| b.as_slice().to_vec()).collect(),
        family_basis: family.basis,
    })
}

/// Poisson-stable drift, bracket generating at the query points, and `0`
/// interior to the convex hull of `U`.
pub fn bonnard_check(
    sys: &SystemDef,
    u: &ControlSet,
    depth: usize,
    points: &[Vec<f64>],
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let start = Instant::now();
    let mut cert = Certificate::new(sys, TheoremTag::BracketGenerating, points.first().map_or(&[][..], |p| p.as_slice()));
    let poisson = sys.poisson_stable;
    cert.notes.push(if poisson { Note::PoissonAsserted } else { Note::PoissonNotAsserted });
    let report = bracket_family(sys, BracketFamily::Full, depth, points, None)?;
    let mut generating = true;
    for r in &report.ranks {
        if r.rank < sys.dim() {
            generating = false;
            cert.notes.push(Note::NotBracketGenerating {
                point: r.point.clone(),
                rank: r.rank,
                dim: sys.dim(),
            });
        }
    }
    cert.evidence.brackets.push(report);
    let verdict: ConeVerdict = cone_full(&u.generators())?;
    cert.evidence.cone = Some(verdict.status);
    cert.margins.cone = Some(verdict.margin);
    let neighborhood = verdict.status == ConeStatus::Full;
    if !neighborhood {
        cert.notes.push(Note::ZeroNotInterior);
    }
    cert.witness = Some(verdict.witness);
    cert.status = if poisson && generating && neighborhood {
        Status::SufficientMet
    } else {
        Status::Inconclusive
    };
    Ok(cert.finish(start, opts))
}

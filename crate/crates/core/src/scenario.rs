//! Scenario configuration, built-in scenarios and the runner that writes
//! certificates (JSON) and reach clouds (CSV).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{
    bonnard_check, bracket_family, check_global, check_obstruction, check_sufficient, phase, span_consistency,
    BracketFamily, BracketFamilyReport, Certificate, CertifyError, CertifyOptions, ObstructionMode, SpanReport,
    Status, SufficientMode,
};
use crate::cone::Witness;
use crate::expr::{parse_expr_with, ExprError, Scope, VectorField};
use crate::models;
use crate::reach::{mc_reach, HullSummary, McOptions, ReachError};
use crate::system::{ControlSet, ProjectionSpec, SystemDef, SystemError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown built-in system {0:?}")]
    UnknownBuiltin(String),
    #[error("config must give exactly one of `builtin` and `system`")]
    SystemSource,
    #[error("missing parameter {0:?} for the built-in system")]
    MissingParam(String),
    #[error("no query points")]
    NoPoints,
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error(transparent)]
    Reach(#[from] ReachError),
}

/// A system written out in the expression language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub coords: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Drift components; omitted for product form, where the drift is `omega ∂/∂(last coordinate)`.
    #[serde(default)]
    pub drift: Option<Vec<String>>,
    pub controls: Vec<Vec<String>>,
    #[serde(default)]
    pub omega: Option<String>,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default)]
    pub poisson_stable: bool,
}

impl SystemSpec {
    pub fn build(&self, name: &str) -> Result<SystemDef, ScenarioError> {
        let coords: Arc<[String]> = self.coords.clone().into();
        let scope = Scope {
            coords: &coords,
            params: Some(&self.params),
        };
        let field = |src: &[String]| -> Result<VectorField, ExprError> {
            let refs: Vec<&str> = src.iter().map(String::as_str).collect();
            VectorField::parse(&refs, &scope)
        };
        let controls = self.controls.iter().map(|c| field(c)).collect::<Result<Vec<_>, _>>()?;
        let mut sys = match (&self.omega, &self.drift) {
            (Some(w), None) => SystemDef::product(name, coords.clone(), parse_expr_with(w, &scope)?, controls)?,
            (None, Some(d)) => SystemDef::new(name, field(d)?, controls)?,
            (None, None) => SystemDef::new(name, VectorField::zero(coords.clone()), controls)?,
            (Some(_), Some(_)) => return Err(ScenarioError::SystemSource),
        };
        if self.period.is_some() {
            sys.period = self.period;
        }
        sys.poisson_stable |= self.poisson_stable;
        Ok(sys)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    Local {
        tf: f64,
        #[serde(default)]
        projected: bool,
    },
    OnePeriod {
        #[serde(default = "yes")]
        projected: bool,
    },
    Obstruction {
        #[serde(default)]
        tf: Option<f64>,
        #[serde(default)]
        projected: bool,
    },
    /// Sufficient test over one period and orbital obstruction, combined.
    Phase,
    Global,
    Bonnard {
        #[serde(default = "three")]
        depth: usize,
    },
    Brackets {
        family: BracketFamily,
        #[serde(default = "three")]
        depth: usize,
    },
    Span {
        #[serde(default = "three")]
        depth: usize,
    },
}

fn yes() -> bool {
    true
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub samples: usize,
    #[serde(default = "one")]
    pub periods: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "sixteen")]
    pub intervals_per_period: usize,
}

fn one() -> f64 {
    1.0
}

fn sixteen() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    pub control_set: ControlSet,
    pub points: Vec<Vec<f64>>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub mc: Option<McSpec>,
    /// Coordinates kept by the fibration; defaults to dropping the angle in product form.
    #[serde(default)]
    pub projection: Option<Vec<usize>>,
}

pub const BUILTINS: [(&str, &str); 4] = [
    ("sector", "rotated disk-sector inputs on R^3 x S^1; params theta (latitude)"),
    ("heisenberg", "rotating single input, Heisenberg area coordinate, on R^3 x S^1"),
    ("degenerate_pair", "two inputs on R^2 x S^1, second field vanishes on I1 = 0"),
    ("monotone", "dI/dt = u, dphi/dt = 1"),
];

fn param(params: &BTreeMap<String, f64>, key: &str) -> Result<f64, ScenarioError> {
    params.get(key).copied().ok_or_else(|| ScenarioError::MissingParam(key.into()))
}

pub fn builtin_system(name: &str, params: &BTreeMap<String, f64>) -> Result<SystemDef, ScenarioError> {
    Ok(match name {
        "sector" => models::sector(param(params, "theta")?),
        "heisenberg" => models::heisenberg(),
        "degenerate_pair" => models::degenerate_pair(),
        "monotone" => models::monotone(),
        other => return Err(ScenarioError::UnknownBuiltin(other.into())),
    })
}

/// Ready-made scenarios, addressable from the command line by name.
pub fn builtin_scenario(name: &str) -> Option<Scenario> {
    let sector = |theta: f64, mc: bool| Scenario {
        name: format!("sector_theta{theta}"),
        builtin: Some("sector".into()),
        params: BTreeMap::from([("theta".into(), theta)]),
        system: None,
        control_set: ControlSet::disk_sector(0.5),
        points: vec![vec![0.0; 4]],
        checks: vec![CheckSpec::Phase],
        mc: mc.then_some(McSpec {
            samples: 2000,
            periods: 1.0,
            seed: 0,
            intervals_per_period: 16,
        }),
        projection: None,
    };
    Some(match name {
        "sector_inside" => sector(0.3, true),
        "sector_boundary" => sector(0.5, false),
        "sector_outside" => sector(0.7, true),
        "heisenberg" => Scenario {
            name: "heisenberg".into(),
            builtin: Some("heisenberg".into()),
            params: BTreeMap::new(),
            system: None,
            control_set: ControlSet::interval(0.0, 1.0),
            points: vec![vec![0.3, -0.2, 0.1, 0.0]],
            checks: vec![
                CheckSpec::Phase,
                CheckSpec::Bonnard { depth: 3 },
                CheckSpec::Brackets {
                    family: BracketFamily::DriftAdjoint,
                    depth: 3,
                },
                CheckSpec::Brackets {
                    family: BracketFamily::Full,
                    depth: 3,
                },
                CheckSpec::Span { depth: 3 },
            ],
            mc: None,
            projection: None,
        },
        "degenerate_pair" => Scenario {
            name: "degenerate_pair".into(),
            builtin: Some("degenerate_pair".into()),
            params: BTreeMap::new(),
            system: None,
            control_set: ControlSet::cube(2, 0.0, 1.0),
            points: vec![vec![0.0, 0.0, 0.0], vec![0.1, 0.0, 0.0], vec![-0.1, 0.0, 0.0]],
            checks: vec![CheckSpec::Obstruction {
                tf: None,
                projected: true,
            }],
            mc: None,
            projection: None,
        },
        "monotone" => Scenario {
            name: "monotone".into(),
            builtin: Some("monotone".into()),
            params: BTreeMap::new(),
            system: None,
            control_set: ControlSet::interval(0.0, 1.0),
            points: vec![vec![0.0, 0.0]],
            checks: vec![CheckSpec::Bonnard { depth: 3 }, CheckSpec::Phase],
            mc: None,
            projection: None,
        },
        _ => return None,
    })
}

pub const BUILTIN_SCENARIOS: [&str; 6] = [
    "sector_inside",
    "sector_boundary",
    "sector_outside",
    "heisenberg",
    "degenerate_pair",
    "monotone",
];

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn system(&self) -> Result<SystemDef, ScenarioError> {
        match (&self.builtin, &self.system) {
            (Some(b), None) => {
                let mut s = builtin_system(b, &self.params)?;
                s.name = self.name.clone();
                Ok(s)
            }
            (None, Some(spec)) => spec.build(&self.name),
            _ => Err(ScenarioError::SystemSource),
        }
    }

    fn projection(&self, sys: &SystemDef) -> Result<ProjectionSpec, ScenarioError> {
        match &self.projection {
            Some(keep) => Ok(ProjectionSpec::new(keep.clone(), sys.dim())?),
            None => Ok(sys.default_projection()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReachSummary {
    pub samples: usize,
    pub kept: usize,
    pub failures: usize,
    pub seed: u64,
    pub horizon: f64,
    pub hull: HullSummary,
    /// `max ⟨p, ΔI⟩` over endpoints, for the first obstruction witness found.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness_max: Option<f64>,
    pub cloud: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub certificates: Vec<Certificate>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub phases: Vec<PhaseSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub brackets: Vec<BracketFamilyReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub spans: Vec<SpanReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reach: Option<ReachSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub point: Vec<f64>,
    pub status: Status,
}

impl ScenarioReport {
    /// One line per certificate, for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.certificates {
            let tag = serde_json::to_string(&c.theorem).expect("tag serializes");
            out.push_str(&format!("{:<24} {:<20} {:?} at {:?}\n", self.scenario, tag.trim_matches('"'), c.status, c.point));
        }
        for p in &self.phases {
            out.push_str(&format!("{:<24} {:<20} {:?} at {:?}\n", self.scenario, "phase", p.status, p.point));
        }
        for b in &self.brackets {
            let ranks: Vec<usize> = b.ranks.iter().map(|r| r.rank).collect();
            out.push_str(&format!("{:<24} {:<20} ranks {:?}\n", self.scenario, format!("{:?}", b.family), ranks));
        }
        for s in &self.spans {
            out.push_str(&format!(
                "{:<24} {:<20} sample {} family {} agree {}\n",
                self.scenario, "span", s.sample_rank, s.family_rank, s.agree
            ));
        }
        if let Some(r) = &self.reach {
            out.push_str(&format!(
                "{:<24} {:<20} {} endpoints, start {:?}{}\n",
                self.scenario,
                "reach",
                r.kept,
                r.hull.position,
                r.witness_max.map_or(String::new(), |w| format!(", max <p, dI> = {w:.3e}"))
            ));
        }
        out
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>) -> Result<(), ScenarioError> {
    let wrap = |source| ScenarioError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut w = BufWriter::new(file);
    f(&mut w).map_err(wrap)?;
    w.flush().map_err(wrap)
}

/// Run the requested checks and the optional Monte-Carlo probe; write
/// `<name>.json` and, with MC, `<name>_cloud.csv` into `out_dir`.
pub fn run_scenario(s: &Scenario, out_dir: &Path, opts: &CertifyOptions) -> Result<ScenarioReport, ScenarioError> {
    let sys = s.system()?;
    if s.points.is_empty() {
        return Err(ScenarioError::NoPoints);
    }
    let u = &s.control_set;
    let proj = s.projection(&sys)?;
    let mut report = ScenarioReport {
        scenario: s.name.clone(),
        ..ScenarioReport::default()
    };
    for check in &s.checks {
        match check {
            CheckSpec::Local { tf, projected } => {
                let mode = if *projected {
                    SufficientMode::LocalProjected {
                        tf: *tf,
                        proj: proj.clone(),
                    }
                } else {
                    SufficientMode::Local { tf: *tf }
                };
                for x in &s.points {
                    report.certificates.push(check_sufficient(&sys, u, x, &mode, opts)?);
                }
            }
            CheckSpec::OnePeriod { projected } => {
                let mode = if *projected {
                    SufficientMode::OnePeriodProjected { proj: proj.clone() }
                } else {
                    SufficientMode::OnePeriod
                };
                for x in &s.points {
                    report.certificates.push(check_sufficient(&sys, u, x, &mode, opts)?);
                }
            }
            CheckSpec::Obstruction { tf, projected } => {
                let mode = match tf {
                    Some(tf) => ObstructionMode::Along {
                        tf: *tf,
                        proj: projected.then(|| proj.clone()),
                    },
                    None => ObstructionMode::Orbital { proj: proj.clone() },
                };
                for x in &s.points {
                    report.certificates.push(check_obstruction(&sys, u, x, &mode, opts)?);
                }
            }
            CheckSpec::Phase => {
                for x in &s.points {
                    let p = phase(&sys, u, x, opts)?;
                    report.phases.push(PhaseSummary {
                        point: x.clone(),
                        status: p.status,
                    });
                    report.certificates.push(p.sufficient);
                    report.certificates.push(p.obstruction);
                }
            }
            CheckSpec::Global => report.certificates.push(check_global(&sys, u, &s.points, opts)?),
            CheckSpec::Bonnard { depth } => report.certificates.push(bonnard_check(&sys, u, *depth, &s.points, opts)?),
            CheckSpec::Brackets { family, depth } => {
                report.brackets.push(bracket_family(&sys, *family, *depth, &s.points, None)?)
            }
            CheckSpec::Span { depth } => {
                for x in &s.points {
                    let (t1, t2) = (0.0, crate::flow::period(&sys, x).unwrap_or(1.0));
                    report.spans.push(span_consistency(&sys, u, x, t1, t2, *depth, None, opts)?);
                }
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|source| ScenarioError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    if let Some(mc) = &s.mc {
        let x0 = &s.points[0];
        let horizon = crate::flow::period(&sys, x0).unwrap_or(1.0) * mc.periods;
        let mopts = McOptions {
            intervals_per_period: mc.intervals_per_period,
            projection: Some(proj.clone()),
            ode: opts.ode,
        };
        let cloud = mc_reach(&sys, u, x0, horizon, mc.samples, mc.seed, &mopts)?;
        let witness = report.certificates.iter().find_map(|c| match (&c.status, &c.witness) {
            (Status::Obstructed, Some(Witness::Covector { p })) if c.point == *x0 => Some(p.clone()),
            _ => None,
        });
        let start = proj.apply(&nalgebra::DVector::from_column_slice(x0));
        let witness_max = witness.map(|p| {
            cloud
                .projected()
                .iter()
                .map(|e| e.iter().zip(start.iter()).zip(&p).map(|((a, b), c)| (a - b) * c).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let name = format!("{}_cloud.csv", s.name);
        write_file(&out_dir.join(&name), |w| cloud.write_csv(w))?;
        report.reach = Some(ReachSummary {
            samples: mc.samples,
            kept: cloud.endpoints.len(),
            failures: cloud.failures,
            seed: mc.seed,
            horizon,
            hull: cloud.hull.clone(),
            witness_max,
            cloud: name,
        });
    }
    write_file(&out_dir.join(format!("{}.json", s.name)), |w| {
        serde_json::to_writer_pretty(&mut *w, &report).map_err(io::Error::other)?;
        writeln!(w)
    })?;
    Ok(report)
}

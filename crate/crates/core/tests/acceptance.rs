//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use ctrlcert::certify::{
    bracket_family, check_obstruction, phase, span_consistency, BracketFamily, Note, ObstructionMode,
};
use ctrlcert::flow::{flow, pushforward, transition};
use ctrlcert::goldfish::{eps1_ratio, goldfish, levels};
use ctrlcert::ltv::{linearize, sphere_points, ConeMode, LtvSystem};
use ctrlcert::models::{degenerate_pair, heisenberg, sector};
use ctrlcert::scenario::builtin_scenario;
use ctrlcert::expr::Scope;
use ctrlcert::{
    cone_full, mc_reach, run_scenario, CertifyOptions, ConeStatus, ControlSet, HullPosition, McOptions,
    OdeOptions, PolarInterior, Status, SystemDef, VectorField, Witness,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn phase_diagram() -> Outcome {
    let start = Instant::now();
    let u = ControlSet::disk_sector(0.5);
    let opts = CertifyOptions::default();
    let mut thetas: Vec<f64> = (-16..=16).map(|k| k as f64 * 0.05).collect();
    thetas.retain(|t| t.abs() <= 0.8 + 1e-12);
    let mut counts = [0usize; 3];
    for &theta in &thetas {
        let sys = sector(theta);
        let p = phase(&sys, &u, &[0.0; 4], &opts).map_err(err)?;
        let want = if theta.abs() < 0.5 - 1e-9 {
            Status::SufficientMet
        } else if theta.abs() > 0.5 + 1e-9 {
            Status::Obstructed
        } else {
            Status::Inconclusive
        };
        ensure(p.status == want, format!("theta={theta:.2}: got {:?}, want {want:?}", p.status))?;
        if want == Status::Inconclusive {
            ensure(
                p.sufficient.evidence.cone == Some(ConeStatus::Degenerate),
                format!("theta={theta:.2}: cone is not Degenerate"),
            )?;
        }
        counts[match want {
            Status::SufficientMet => 0,
            Status::Obstructed => 1,
            _ => 2,
        }] += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!(
        "{} angles: {} sufficient, {} obstructed, {} degenerate in {secs:.1} s",
        thetas.len(),
        counts[0],
        counts[1],
        counts[2]
    ))
}

fn membership() -> Outcome {
    let (theta, alpha) = (0.3, 0.5);
    let sys = sector(theta);
    let u = ControlSet::disk_sector(alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let r = rng.random::<f64>().sqrt();
        let beta = rng.random_range(-alpha..=alpha);
        let phi = rng.random_range(0.0..2.0 * PI);
        let c = [r * beta.cos(), r * beta.sin()];
        ensure(u.contains(&c, 1e-12), "sampled control left U")?;
        let b = sys.control_matrix(&[0.0, 0.0, 0.0, phi]).map_err(err)?;
        let v = b * DVector::from_column_slice(&c);
        let h = v[0].hypot(v[1]);
        let norm = (h * h + v[2] * v[2]).sqrt();
        worst = worst
            .max(norm - 1.0)
            .max(h * (theta - alpha).tan() - v[2])
            .max(v[2] - h * (theta + alpha).tan())
            .max(v[3].abs());
    }
    ensure(worst <= 1e-9, format!("worst violation {worst:e}"))?;
    Ok(format!("10000 vectors, worst violation {worst:.1e}"))
}

fn as_str_rows(rows: &[Vec<String>]) -> Vec<Vec<&str>> {
    rows.iter().map(|r| r.iter().map(String::as_str).collect()).collect()
}

fn random_ltv(rng: &mut ChaCha8Rng) -> LtvSystem {
    let d = rng.random_range(1..=4usize);
    let m = rng.random_range(1..=2usize.min(d));
    let coupling = [0.0, 0.3, 1.5][rng.random_range(0..3usize)];
    let a: Vec<Vec<String>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let c: f64 = rng.random_range(-1.0..1.0);
                    if i == j {
                        format!("{c}")
                    } else if rng.random::<bool>() {
                        format!("{}*sin(t)", c * coupling)
                    } else {
                        format!("{}", c * coupling)
                    }
                })
                .collect()
        })
        .collect();
    let b: Vec<Vec<String>> = (0..d)
        .map(|_| (0..m).map(|_| format!("{}", rng.random_range(-1.0..1.0))).collect())
        .collect();
    let one_sided = rng.random::<bool>();
    let mut vertices: Vec<Vec<f64>> = (0..m + 2)
        .map(|_| {
            (0..m)
                .map(|k| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    if one_sided && k == 0 {
                        x.abs() + 0.05
                    } else {
                        x
                    }
                })
                .collect()
        })
        .collect();
    vertices.push(vec![0.0; m]);
    LtvSystem::explicit(&as_str_rows(&a), &as_str_rows(&b), ControlSet::Polytope { vertices }, 0.0, 1.0)
        .expect("generated instance is valid")
}

fn ltv_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut agree, mut full) = (0, 0);
    let mut excluded = Vec::new();
    for i in 0..100 {
        let l = random_ltv(&mut rng);
        let cone = l.cone_condition(&ConeMode::AtStart, 64).map_err(err)?;
        let zi = l.zero_interior(400, None, 64).map_err(err)?;
        let margin = match (&cone.status, &cone.polar_interior) {
            (ConeStatus::Full, _) => cone.margin,
            (_, PolarInterior::Nonempty { delta, .. }) => -delta,
            _ => 0.0,
        };
        if margin.abs() < 1e-6 {
            excluded.push(i);
            continue;
        }
        let cone_full = cone.status == ConeStatus::Full;
        ensure(
            cone_full == zi.interior,
            format!("instance {i}: cone {:?}, zero interior {} (min support {:e})", cone.status, zi.interior, zi.min_support),
        )?;
        agree += 1;
        full += usize::from(cone_full);
    }
    ensure(excluded.len() < 10, format!("instances {excluded:?} excluded"))?;
    Ok(format!("{agree} agree ({full} full), excluded for small margin: {excluded:?}"))
}

fn heisenberg_ranks() -> Outcome {
    let sys = heisenberg();
    let u = ControlSet::interval(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Vec<f64>> = (0..20)
        .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let full = bracket_family(&sys, BracketFamily::Full, 3, &pts, None).map_err(err)?;
    let adj = bracket_family(&sys, BracketFamily::DriftAdjoint, 3, &pts, None).map_err(err)?;
    ensure(full.ranks.iter().all(|r| r.rank == 4), "full bracket rank below 4")?;
    ensure(adj.ranks.iter().all(|r| r.rank == 2), "drift-adjoint rank is not 2")?;
    for x in &pts {
        let s = span_consistency(&sys, &u, x, 0.0, 2.0 * PI, 4, None, &CertifyOptions::default()).map_err(err)?;
        ensure(s.agree && s.sample_rank == 2, format!("span mismatch at {x:?}: {} vs {}", s.sample_rank, s.family_rank))?;
    }
    Ok("20 points: full rank 4, drift-adjoint rank 2, sampled span agrees".into())
}

fn silverman_meadows() -> Outcome {
    let l = levels(0.5, 1.0).map_err(err)?;
    let lin = linearize(
        &heisenberg(),
        &[0.1, -0.2, 0.3, 0.0],
        0.0,
        PI / 3.0,
        Some(&[l.eps1]),
        ControlSet::interval(-l.eps1, l.eps - l.eps1),
    )
    .map_err(err)?
    .reduce_angle()
    .map_err(err)?;
    for j in 0..50 {
        let t = PI / 3.0 * j as f64 / 49.0;
        let r = lin.silverman_meadows(t, 2).map_err(err)?;
        ensure(r == 3, format!("rank {r} at t={t:.4}"))?;
    }
    let c = lin.cone_condition(&ConeMode::AtStart, 64).map_err(err)?;
    ensure(c.status == ConeStatus::Full, format!("cone {:?}", c.status))?;
    Ok(format!("rank 3 at 50 times, cone Full (margin {:.2e})", c.margin))
}

fn goldfish_loop() -> Outcome {
    let ratio = eps1_ratio();
    ensure((ratio - 0.584_193_92).abs() < 1e-8, format!("eps1/eps2 = {ratio}"))?;
    let r = goldfish(1.0 - 1e-9, 1.0, [0.3, -0.4, 0.2, 0.7], OdeOptions::with_tol(1e-12)).map_err(err)?;
    let l = r.levels;
    ensure(0.0 < l.eps1 && l.eps1 < l.eps3 && l.eps3 < l.eps2, "level ordering")?;
    ensure(r.closure_closed_form <= 1e-9, format!("closed-form closure {:e}", r.closure_closed_form))?;
    ensure(r.closure_numeric <= 1e-7, format!("numeric closure {:e}", r.closure_numeric))?;
    ensure(r.max_gap <= 1e-7, format!("checkpoint gap {:e}", r.max_gap))?;
    Ok(format!(
        "eps1/eps2 = {ratio:.10}, closure {:.1e} / {:.1e}, max gap {:.1e}",
        r.closure_closed_form, r.closure_numeric, r.max_gap
    ))
}

fn area_property() -> Outcome {
    let s = ctrlcert::area::area_property_test(240, 7);
    ensure(s.closed >= 200, format!("only {} closed trials", s.closed))?;
    ensure(s.violations == 0, format!("{} violations", s.violations))?;
    Ok(format!("{} closed, {} discarded, 0 violations, min gain {:.3e}", s.closed, s.discarded, s.min_gain))
}

fn degenerate_regression() -> Outcome {
    let sys = degenerate_pair();
    let u = ControlSet::cube(2, 0.0, 1.0);
    let mode = ObstructionMode::Orbital {
        proj: sys.default_projection(),
    };
    let opts = CertifyOptions::default();
    let at = |i1: f64| check_obstruction(&sys, &u, &[i1, 0.0, 0.0], &mode, &opts).map_err(err);
    let origin = at(0.0)?;
    ensure(origin.status == Status::AssumptionFailed, format!("origin: {:?}", origin.status))?;
    ensure(
        origin.notes.iter().any(|n| matches!(n, Note::IndependenceFailed { rank: 1, m: 2, .. })),
        "origin: no independence note",
    )?;
    let plus = at(0.1)?;
    ensure(
        matches!(plus.witness, Some(Witness::Covector { .. })) && !plus.notes.contains(&Note::PolarEmpty),
        format!("I1=+0.1: polar interior not found ({:?})", plus.status),
    )?;
    let minus = at(-0.1)?;
    ensure(minus.notes.contains(&Note::PolarEmpty), format!("I1=-0.1: polar not empty ({:?})", minus.status))?;
    Ok(format!("origin AssumptionFailed; +0.1 nonempty ({:?}); -0.1 empty", plus.status))
}

fn mc_cross_validation() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(err)?;
    let opts = CertifyOptions::default();
    let inside = run_scenario(&builtin_scenario("sector_inside").expect("built-in"), dir.path(), &opts).map_err(err)?;
    let outside = run_scenario(&builtin_scenario("sector_outside").expect("built-in"), dir.path(), &opts).map_err(err)?;
    let (ri, ro) = (inside.reach.expect("mc section"), outside.reach.expect("mc section"));
    ensure(ri.samples == 2000 && ro.samples == 2000, "sample count")?;
    ensure(ri.hull.position == HullPosition::Interior, format!("theta=0.3: {:?}", ri.hull.position))?;
    ensure(ro.hull.position != HullPosition::Interior, "theta=0.7: start interior")?;
    let w = ro.witness_max.ok_or("theta=0.7: no obstruction witness")?;
    ensure(w <= 1e-6, format!("theta=0.7: max <p, dI> = {w:e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!("0.3 interior, 0.7 {:?} with max <p, dI> = {w:.1e}, {secs:.1} s", ro.hull.position))
}

fn chart(names: &[&str]) -> Arc<[String]> {
    names.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
}

fn invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_witness: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..=4usize);
        let k = rng.random_range(1..=8usize);
        let g: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let v = cone_full(&g).map_err(err)?;
        worst_witness = worst_witness.max(v.witness_violation(&g));
    }
    ensure(worst_witness <= 1e-9, format!("cone witness violation {worst_witness:e}"))?;

    let c = chart(&["x", "y", "z"]);
    let scope = Scope { coords: &c, params: None };
    let parse = |src: &[&str]| VectorField::parse(src, &scope).map_err(err);
    let drift = parse(&["-y + 0.1*x*z", "x", "0.2*sin(x)"])?;
    let f1 = parse(&["1", "0", "z"])?;
    let f2 = parse(&["0", "cos(x)", "1"])?;
    let f3 = parse(&["1", "2*cos(x)", "z + 2"])?;
    let sys = SystemDef::new("twist", drift, vec![f1, f2, f3]).map_err(err)?;
    let ode = OdeOptions::default();
    let x0 = [0.3, 0.1, -0.2];
    let traj = flow(&sys, &x0, 3.0, ode).map_err(err)?;
    let phi = |a: f64, b: f64| transition(&sys, &traj, a, b, ode).map(|t| t.matrix).map_err(err);
    let cocycle = (phi(0.0, 2.5)? - phi(1.0, 2.5)? * phi(0.0, 1.0)?).amax();
    ensure(cocycle <= 1e-9, format!("cocycle defect {cocycle:e}"))?;
    let push = |k: usize| pushforward(&sys, &x0, 1.7, k, ode).map_err(err);
    let linearity = (push(2)? - (push(0)? + push(1)? * 2.0)).amax();
    ensure(linearity <= 1e-9, format!("pushforward linearity defect {linearity:e}"))?;

    let lin = linearize(&heisenberg(), &[0.1, -0.2, 0.3, 0.0], 0.0, PI / 3.0, Some(&[0.3]), ControlSet::interval(-0.3, 0.2))
        .map_err(err)?
        .reduce_angle()
        .map_err(err)?;
    let oracle = lin.support_oracle(32, None).map_err(err)?;
    let ps = sphere_points(3, 100);
    let mut subadd: f64 = 0.0;
    for (i, p) in ps.iter().enumerate() {
        let q = &ps[(i * 31 + 7) % ps.len()];
        let sum = p + q;
        subadd = subadd.max(oracle.support(sum.as_slice()) - oracle.support(p.as_slice()) - oracle.support(q.as_slice()));
    }
    ensure(subadd <= 1e-9, format!("support subadditivity defect {subadd:e}"))?;

    let s = sector(0.3);
    let mopts = McOptions {
        projection: Some(s.default_projection()),
        ..McOptions::default()
    };
    let u = ControlSet::disk_sector(0.5);
    let a = mc_reach(&s, &u, &[0.0; 4], 2.0 * PI, 100, 5, &mopts).map_err(err)?;
    let b = mc_reach(&s, &u, &[0.0; 4], 2.0 * PI, 100, 5, &mopts).map_err(err)?;
    ensure(a == b, "reach cloud not reproducible")?;
    let residual = a.reintegration_residual(&s, mopts.ode).map_err(err)?;
    ensure(residual <= 10.0 * mopts.ode.atol, format!("reintegration residual {residual:e}"))?;
    let mut scen = builtin_scenario("sector_outside").expect("built-in");
    scen.mc.as_mut().expect("mc").samples = 100;
    let (d1, d2) = (tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?);
    run_scenario(&scen, d1.path(), &CertifyOptions::default()).map_err(err)?;
    run_scenario(&scen, d2.path(), &CertifyOptions::default()).map_err(err)?;
    for f in ["sector_theta0.7.json", "sector_theta0.7_cloud.csv"] {
        let same = fs::read(d1.path().join(f)).map_err(err)? == fs::read(d2.path().join(f)).map_err(err)?;
        ensure(same, format!("{f} differs between runs"))?;
    }
    Ok(format!(
        "witness {worst_witness:.1e}, cocycle {cocycle:.1e}, linearity {linearity:.1e}, subadditivity {subadd:.1e}, residual {residual:.1e}, outputs byte-identical"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("phase diagram of the rotated sector system", phase_diagram),
        ("membership of sampled control directions", membership),
        ("cone condition equals zero-interior test on random LTV systems", ltv_equivalence),
        ("bracket ranks and span consistency for the rotating single input", heisenberg_ranks),
        ("rank condition and full cone for the linearized loop", silverman_meadows),
        ("closed two-period loop", goldfish_loop),
        ("one-turn area property", area_property),
        ("vanishing second input", degenerate_regression),
        ("Monte-Carlo reach cross-validation", mc_cross_validation),
        ("module invariants", invariants),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

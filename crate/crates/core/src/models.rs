//! Built-in systems used by the scenarios, the acceptance suite and the benches.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::expr::{Expr, Scope, VectorField};
use crate::system::SystemDef;

fn chart(names: &[&str]) -> Arc<[String]> {
    names.iter().map(|s| s.to_string()).collect::<Vec<_>>().into()
}

fn product(name: &str, coords: &[&str], params: &BTreeMap<String, f64>, fields: &[&[&str]]) -> SystemDef {
    let c = chart(coords);
    let scope = Scope {
        coords: &c,
        params: Some(params),
    };
    let controls = fields
        .iter()
        .map(|f| VectorField::parse(f, &scope).expect("built-in field parses"))
        .collect();
    SystemDef::product(name, c, Expr::one(), controls).expect("built-in system is well formed")
}

/// Rotated sector system on `R^3 × S^1`: the sector axis sits at latitude `theta`.
/// Pair with `ControlSet::disk_sector(alpha)`.
pub fn sector(theta: f64) -> SystemDef {
    let params = BTreeMap::from([("theta".to_string(), theta)]);
    product(
        "sector",
        &["I1", "I2", "I3", "phi"],
        &params,
        &[
            &["cos(phi)*cos(theta)", "sin(phi)*cos(theta)", "sin(theta)", "0"],
            &["-cos(phi)*sin(theta)", "-sin(phi)*sin(theta)", "cos(theta)", "0"],
        ],
    )
}

/// Heisenberg-type system with a rotating single input on `R^3 × S^1`.
pub fn heisenberg() -> SystemDef {
    product(
        "heisenberg",
        &["I1", "I2", "I3", "phi"],
        &BTreeMap::new(),
        &[&["cos(phi)", "sin(phi)", "-I2/2*cos(phi) + I1/2*sin(phi)", "0"]],
    )
}

/// Two inputs on `R^2 × S^1` where the second field vanishes on `I1 = 0`.
/// Pair with `[0,1]^2`.
pub fn degenerate_pair() -> SystemDef {
    product(
        "degenerate_pair",
        &["I1", "I2", "phi"],
        &BTreeMap::new(),
        &[&["sin(phi)", "1", "0"], &["0", "I1", "0"]],
    )
}

/// `İ = u`, `φ̇ = 1`.
pub fn monotone() -> SystemDef {
    product("monotone", &["I", "phi"], &BTreeMap::new(), &[&["1", "0"]])
}

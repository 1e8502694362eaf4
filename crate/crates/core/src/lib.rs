//! Numerical certificates for controllability of affine control systems
//! `ẋ = X0(x) + Σ u_k X^k(x)` whose controls live in a compact set `U` that
//! need not be a neighbourhood of the origin.

pub mod area;
pub mod certify;
pub mod cone;
pub mod expr;
pub mod flow;
pub mod goldfish;
pub mod lp;
pub mod ltv;
pub mod models;
pub mod ode;
pub mod reach;
pub mod scenario;
pub mod system;

pub use cone::{cone_full, polar_interior, span_rank, ConeStatus, ConeVerdict, PolarInterior, Witness};
pub use expr::{Expr, ExprError, ExprMatrix, VectorField};
pub use system::{validate, ControlSet, Diagnostic, ProjectionSpec, SystemDef, SystemError};
pub use certify::{Certificate, CertifyOptions, ObstructionMode, Status, SufficientMode, TheoremTag};
pub use ode::OdeOptions;
pub use reach::{mc_reach, HullPosition, McOptions, ReachCloud};
pub use scenario::{run_scenario, Scenario, ScenarioError, ScenarioReport};

//! Stability analysis of DC microgrids with constant-power terminals and droop
//! control, treated as gradient systems of a strongly convex potential.
//!
//! The pipeline is:
//!
//! 1. [`grid`]: ingest a network description, Kron-reduce passive nodes and
//!    assemble a per-unit [`GridModel`].
//! 2. [`potential`]: evaluate the potential `W`, its gradient and Hessian, and
//!    the nodal dynamics.
//! 3. [`equilibrium`]: minimize `W` with a damped Newton method.
//! 4. [`roa`]: estimate the region of attraction as the largest certified
//!    hypercube in `x = 1/v²` coordinates.
//! 5. [`sim`]: integrate transients with scripted events and local
//!    under-voltage protection.

// Input checks are written as negated comparisons so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod par;
pub mod potential;
pub mod roa;
pub mod sim;

pub use equilibrium::{solve_equilibrium, uniqueness_probe, EquilibriumResult, Method, SolverConfig};
pub use error::{Error, Result};
pub use grid::{GridModel, Line, PerUnitBase, TerminalParams};
pub use potential::{DroopVariant, PotentialEvaluation};
pub use roa::{estimate_roa, feasibility_oracle, RoaConfig, RoaEstimate};
pub use sim::{simulate, IntegratorConfig, Scenario, Trajectory};

use serde::{Deserialize, Serialize};

use super::{simulate, IntegratorConfig, Protection, Scenario, Trajectory};
use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::par;
use crate::potential::DroopVariant;
use crate::roa::RoaEstimate;

/// Master-voltage sag on `[t_start, t_end)`, simulated until `horizon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sag {
    pub v0_low: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtectionOutcome {
    pub unprotected: Trajectory,
    pub protected: Trajectory,
    /// `‖v(horizon) − ṽ‖∞` of the protected run; `None` if it diverged.
    pub recovery_error: Option<f64>,
}

/// Runs the same sag from the equilibrium twice: without protection and with
/// each terminal tripping on its own voltage crossing `v_min_i`.
pub fn run_protection_scenario(
    model: &GridModel,
    eq: &EquilibriumResult,
    roa: &RoaEstimate,
    sag: &Sag,
    variant: DroopVariant,
    cfg: &IntegratorConfig,
) -> Result<ProtectionOutcome> {
    if !(sag.t_start <= sag.t_end && sag.t_end <= sag.horizon) {
        return Err(Error::Validation("sag must satisfy t_start <= t_end <= horizon".into()));
    }
    let base = Scenario::new(eq.v_eq.clone(), sag.horizon).with_sag(sag.v0_low, sag.t_start, sag.t_end, model.v0());
    let guarded = base.clone().with_protection(Protection::with_thresholds(roa.v_min.clone()));

    let (unprotected, protected) = par::join(
        || simulate(model, &base, variant, cfg),
        || simulate(model, &guarded, variant, cfg),
    );
    let (unprotected, protected) = (unprotected?, protected?);
    let recovery_error = (!protected.diverged).then(|| protected.final_error(&eq.v()));
    Ok(ProtectionOutcome { unprotected, protected, recovery_error })
}

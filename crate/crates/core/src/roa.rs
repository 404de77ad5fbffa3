//! Region-of-attraction estimate as the largest certified hypercube in the
//! coordinates `x_i = 1/v_i²`.
//!
//! In `x` coordinates the Hessian `H(x) = (P + K) diag(x) + G + K` is affine
//! and diagonal in `x`. Its smallest eigenvalue is concave, so over a box the
//! minimum sits at a vertex, and it is monotone per coordinate: increasing `x_i`
//! helps when `p_i + k_i > 0` and hurts when `p_i + k_i < 0`. The binding corner
//! of the box
//!
//! ```text
//! load-like  (p_i + k_i < 0):  0 < x_i ≤ max(α, x̃_i)      (v_i ≥ v_min_i)
//! otherwise:                   0 < x_i < ∞                 (v_i unconstrained)
//! ```
//!
//! therefore puts load-like coordinates on their upper face and the remaining
//! ones at `x_i = 0`. Feasibility of that single corner is monotone in `α`, and
//! bisection on `α` gives the largest certified box.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaConfig {
    pub mu: f64,
    pub alpha_tol: f64,
    pub alpha_cap: f64,
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self { mu: 1e-6, alpha_tol: 1e-9, alpha_cap: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub feasible: bool,
    pub witness_x: Vec<f64>,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaEstimate {
    pub alpha: f64,
    /// Upper face of the box in `x`; `alpha_cap` marks an unconstrained
    /// coordinate.
    pub x_star: Vec<f64>,
    /// Per-terminal minimum voltage; 0 where unconstrained.
    pub v_min: Vec<f64>,
    pub lambda_min: f64,
    /// Binding corner where `lambda_min` was evaluated.
    pub corner: Vec<f64>,
    pub unbounded: bool,
}

pub fn x_of_v(v: &DVector<f64>) -> Result<DVector<f64>> {
    positive(v)?;
    Ok(v.map(|vi| 1.0 / (vi * vi)))
}

pub fn v_of_x(x: &DVector<f64>) -> Result<DVector<f64>> {
    positive(x)?;
    Ok(x.map(|xi| 1.0 / xi.sqrt()))
}

fn positive(v: &DVector<f64>) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(index) => Err(Error::Domain { index, value: v[index] }),
        None => Ok(()),
    }
}

fn load_like(model: &GridModel) -> Vec<bool> {
    model.terminals().iter().map(|t| t.p + t.k < 0.0).collect()
}

fn corner(loads: &[bool], x_tilde: &DVector<f64>, alpha: f64) -> DVector<f64> {
    DVector::from_iterator(
        loads.len(),
        loads
            .iter()
            .zip(x_tilde.iter())
            .map(|(&load, &xt)| if load { alpha.max(xt) } else { 0.0 }),
    )
}

fn corner_lambda_min(model: &GridModel, x: &DVector<f64>) -> f64 {
    let mut h = model.g().clone();
    for (i, t) in model.terminals().iter().enumerate() {
        h[(i, i)] += (t.p + t.k) * x[i] + t.k;
    }
    linalg::lambda_min(&h)
}

/// Checks whether the box with load faces at `max(alpha, x̃_i)` satisfies
/// `H(x) ⪰ μ I` everywhere, by evaluating its binding corner.
pub fn feasibility_oracle(model: &GridModel, x_tilde: &DVector<f64>, alpha: f64, mu: f64) -> Result<OracleResult> {
    if x_tilde.len() != model.n() {
        return Err(Error::Dimension { expected: model.n(), got: x_tilde.len() });
    }
    positive(x_tilde)?;
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    let x = corner(&load_like(model), x_tilde, alpha);
    let lambda_min = corner_lambda_min(model, &x);
    Ok(OracleResult { feasible: lambda_min >= mu, witness_x: x.iter().copied().collect(), lambda_min })
}

/// Largest certified hypercube around the equilibrium.
///
/// The bisection bracket is `[0, alpha_cap]` and does not depend on the
/// equilibrium, so the result is independent of the master voltage as long as
/// the equilibrium stays certified.
pub fn estimate_roa(model: &GridModel, eq: &EquilibriumResult, cfg: &RoaConfig) -> Result<RoaEstimate> {
    if !(cfg.mu > 0.0 && cfg.alpha_tol > 0.0) {
        return Err(Error::Validation("mu and alpha_tol must be positive".into()));
    }
    let x_tilde = x_of_v(&eq.v())?;
    if x_tilde.len() != model.n() {
        return Err(Error::Dimension { expected: model.n(), got: x_tilde.len() });
    }
    let x_tilde_max = x_tilde.max();
    if !(cfg.alpha_cap > x_tilde_max) {
        return Err(Error::Validation(format!(
            "alpha_cap {} must exceed max x~ = {x_tilde_max}",
            cfg.alpha_cap
        )));
    }

    // The smallest box containing the equilibrium must already be certified.
    let base = feasibility_oracle(model, &x_tilde, 0.0, cfg.mu)?;
    if !base.feasible {
        return Err(Error::NotCertified { mu: cfg.mu, lambda_min: base.lambda_min });
    }

    let loads = load_like(model);
    let at_cap = feasibility_oracle(model, &x_tilde, cfg.alpha_cap, cfg.mu)?;
    let (alpha, witness) = if at_cap.feasible {
        (cfg.alpha_cap, at_cap)
    } else {
        let (mut lo, mut hi) = (0.0_f64, cfg.alpha_cap);
        let mut best = base;
        while hi - lo > cfg.alpha_tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let probe = feasibility_oracle(model, &x_tilde, mid, cfg.mu)?;
            if probe.feasible {
                lo = mid;
                best = probe;
            } else {
                hi = mid;
            }
        }
        (lo, best)
    };
    let unbounded = alpha >= cfg.alpha_cap;

    let mut x_star = Vec::with_capacity(model.n());
    let mut v_min = Vec::with_capacity(model.n());
    for (i, &load) in loads.iter().enumerate() {
        if load && !unbounded {
            let face = alpha.max(x_tilde[i]);
            x_star.push(face);
            v_min.push(1.0 / face.sqrt());
        } else {
            x_star.push(cfg.alpha_cap);
            v_min.push(0.0);
        }
    }
    Ok(RoaEstimate {
        alpha,
        x_star,
        v_min,
        lambda_min: witness.lambda_min,
        corner: witness.witness_x,
        unbounded,
    })
}

/// Hypercube membership in voltage coordinates. A vector of the wrong length
/// is not a member.
pub fn membership(model: &GridModel, roa: &RoaEstimate, v: &DVector<f64>) -> bool {
    v.len() == model.n()
        && roa.v_min.len() == model.n()
        && v.iter().zip(&roa.v_min).all(|(&vi, &lo)| vi > 0.0 && vi >= lo)
}

//! The potential `W`, its derivatives and the nodal dynamics.
//!
//! ```text
//! W(v) = Σ_i [ −(p_i + k_i) ln v_i + g0_i v0 v_i + ½ k_i v_i² ] + ½ vᵀ G v
//! ∇W   = −(p + k)/v + g0 v0 + G v + k ∘ v
//! ∇²W  = (P + K) X + G + K,          X = diag(1/v_i²)
//! ```
//!
//! Two droop models are available. [`DroopVariant::GradientConsistent`] uses
//! `c ∘ dv/dt = −∇W` exactly. [`DroopVariant::LinearDroop`] uses the droop current
//! `k_i (1 − v_i) / v_i` instead of `k_i (1/v_i − v_i)`; the two coincide at
//! `v = 1` and whenever `k = 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DroopVariant {
    /// Exact gradient flow of `W`. Used by every certificate.
    #[default]
    GradientConsistent,
    /// Literal nodal equation with droop current `k (1 − v) / v`.
    LinearDroop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialEvaluation {
    pub w: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub certified: bool,
    pub lambda_min: f64,
}

pub(crate) fn check_voltage(model: &GridModel, v: &DVector<f64>) -> Result<()> {
    if v.len() != model.n() {
        return Err(Error::Dimension { expected: model.n(), got: v.len() });
    }
    match v.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(index) => Err(Error::Domain { index, value: v[index] }),
        None => Ok(()),
    }
}

pub fn potential_w(model: &GridModel, v: &DVector<f64>) -> Result<f64> {
    check_voltage(model, v)?;
    Ok(potential_unchecked(model, v))
}

pub(crate) fn potential_unchecked(model: &GridModel, v: &DVector<f64>) -> f64 {
    let g0 = model.g0();
    let v0 = model.v0();
    let separable: f64 = model
        .terminals()
        .iter()
        .zip(v.iter())
        .zip(g0.iter())
        .map(|((t, &vi), &g0i)| -(t.p + t.k) * vi.ln() + g0i * v0 * vi + 0.5 * t.k * vi * vi)
        .sum();
    separable + 0.5 * v.dot(&(model.g() * v))
}

pub fn gradient_w(model: &GridModel, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_voltage(model, v)?;
    Ok(gradient_unchecked(model, v))
}

pub(crate) fn gradient_unchecked(model: &GridModel, v: &DVector<f64>) -> DVector<f64> {
    let mut grad = model.g() * v;
    let g0 = model.g0();
    let v0 = model.v0();
    for (i, t) in model.terminals().iter().enumerate() {
        grad[i] += -(t.p + t.k) / v[i] + g0[i] * v0 + t.k * v[i];
    }
    grad
}

pub fn hessian_w(model: &GridModel, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_voltage(model, v)?;
    Ok(hessian_unchecked(model, v))
}

pub(crate) fn hessian_unchecked(model: &GridModel, v: &DVector<f64>) -> DMatrix<f64> {
    let mut hess = model.g().clone();
    for (i, t) in model.terminals().iter().enumerate() {
        hess[(i, i)] += (t.p + t.k) / (v[i] * v[i]) + t.k;
    }
    hess
}

pub fn evaluate(model: &GridModel, v: &DVector<f64>) -> Result<PotentialEvaluation> {
    check_voltage(model, v)?;
    Ok(PotentialEvaluation {
        w: potential_unchecked(model, v),
        grad: gradient_unchecked(model, v),
        hess: hessian_unchecked(model, v),
    })
}

/// `dv/dt` under the chosen droop variant.
pub fn dynamics_rhs(model: &GridModel, v: &DVector<f64>, variant: DroopVariant) -> Result<DVector<f64>> {
    check_voltage(model, v)?;
    let mut out = DVector::zeros(model.n());
    rhs_into(model, v, variant, &mut out);
    Ok(out)
}

/// Unchecked right-hand side used inside the integrator; non-positive
/// voltages produce meaningless (but finite or infinite) values.
pub(crate) fn rhs_into(model: &GridModel, v: &DVector<f64>, variant: DroopVariant, out: &mut DVector<f64>) {
    let gv = model.g() * v;
    let g0 = model.g0();
    let v0 = model.v0();
    for (i, t) in model.terminals().iter().enumerate() {
        let current = match variant {
            // Same operation order as the gradient, so c∘rhs = −∇W exactly.
            DroopVariant::GradientConsistent => -(gv[i] + (-(t.p + t.k) / v[i] + g0[i] * v0 + t.k * v[i])),
            DroopVariant::LinearDroop => (t.p + t.k * (1.0 - v[i])) / v[i] - g0[i] * v0 - gv[i],
        };
        out[i] = current / t.c;
    }
}

/// Checks `∇²W(v) ⪰ μ I` through the smallest Hessian eigenvalue.
pub fn convexity_certificate(model: &GridModel, v: &DVector<f64>, mu: f64) -> Result<ConvexityCertificate> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Validation(format!("mu must be positive, got {mu}")));
    }
    let lambda_min = linalg::lambda_min(&hessian_w(model, v)?);
    Ok(ConvexityCertificate { certified: lambda_min >= mu, lambda_min })
}

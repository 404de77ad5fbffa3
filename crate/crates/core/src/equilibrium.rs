//! Equilibrium as the minimizer of `W` over positive voltages.
//!
//! Damped Newton with Armijo backtracking. Steps are truncated so that no
//! component drops below a tenth of its previous value, and iterates where the
//! Hessian is not positive definite take a scaled gradient step instead.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::linalg;
use crate::par;
use crate::potential::{check_voltage, gradient_unchecked, hessian_unchecked, potential_unchecked};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Newton,
    GradientDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol_grad_inf: f64,
    pub max_iter: usize,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    /// Starting point; `None` means all ones.
    pub initial_v: Option<Vec<f64>>,
    pub method: Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_grad_inf: 1e-10,
            max_iter: 100,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            initial_v: None,
            method: Method::Newton,
        }
    }
}

impl SolverConfig {
    pub fn with_initial(mut self, v: Vec<f64>) -> Self {
        self.initial_v = Some(v);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol_grad_inf > 0.0) {
            return Err(Error::Validation(format!("tolerance must be positive, got {}", self.tol_grad_inf)));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Validation(format!("shrink must lie in (0, 1), got {}", self.shrink)));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(Error::Validation("sufficient-decrease constant must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_inf: f64,
    pub w: f64,
    pub step: f64,
    pub newton: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub v_eq: Vec<f64>,
    pub w_at_eq: f64,
    pub residual_inf: f64,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    pub hessian_lambda_min_at_eq: f64,
    /// Hessian positive definite at the returned point.
    pub certified: bool,
}

impl EquilibriumResult {
    pub fn v(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.v_eq)
    }
}

/// Largest step in `[0, 1]` keeping every component above 10% of its current value.
fn positivity_cap(v: &DVector<f64>, d: &DVector<f64>) -> f64 {
    v.iter()
        .zip(d.iter())
        .filter(|(_, &di)| di < 0.0)
        .map(|(&vi, &di)| 0.9 * vi / -di)
        .fold(1.0, f64::min)
}

pub fn solve_equilibrium(model: &GridModel, cfg: &SolverConfig) -> Result<EquilibriumResult> {
    cfg.validate()?;
    let n = model.n();
    let mut v = match &cfg.initial_v {
        Some(init) => DVector::from_column_slice(init),
        None => DVector::from_element(n, 1.0),
    };
    check_voltage(model, &v)?;

    let mut trace = Vec::new();
    let mut w = potential_unchecked(model, &v);
    let mut grad = gradient_unchecked(model, &v);
    let mut residual = linalg::norm_inf(&grad);

    for iteration in 0..=cfg.max_iter {
        if residual <= cfg.tol_grad_inf {
            let hessian_lambda_min_at_eq = linalg::lambda_min(&hessian_unchecked(model, &v));
            log::debug!("equilibrium after {iteration} iterations, residual {residual:e}");
            return Ok(EquilibriumResult {
                v_eq: v.iter().copied().collect(),
                w_at_eq: w,
                residual_inf: residual,
                iterations: iteration,
                trace,
                hessian_lambda_min_at_eq,
                certified: hessian_lambda_min_at_eq > 0.0,
            });
        }
        if iteration == cfg.max_iter {
            break;
        }

        let hess = hessian_unchecked(model, &v);
        let newton_dir = match cfg.method {
            Method::Newton => linalg::spd_solve(&hess, &grad).map(|x| -x),
            Method::GradientDescent => None,
        };
        let gradient_dir = || {
            // 1/L scaling with L a Gershgorin bound on the Hessian.
            let lipschitz = linalg::gershgorin_bound(&hess);
            let scale = if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 };
            -&grad * scale
        };

        let mut accepted = None;
        let candidates: Vec<(DVector<f64>, bool)> = match newton_dir {
            Some(d) => vec![(d, true), (gradient_dir(), false)],
            None => vec![(gradient_dir(), false)],
        };
        'directions: for (dir, is_newton) in candidates {
            let slope = grad.dot(&dir);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = positivity_cap(&v, &dir);
            while t > 1e-16 {
                let trial = &v + &dir * t;
                if trial.iter().all(|&x| x > 0.0) {
                    let w_trial = potential_unchecked(model, &trial);
                    let armijo = w_trial <= w + cfg.sufficient_decrease * t * slope;
                    // Near the minimum W changes below its own rounding; accept
                    // the step if it still shrinks the gradient.
                    let roundoff = (t * slope).abs() <= 1e3 * f64::EPSILON * w.abs().max(1.0)
                        && w_trial <= w + 4.0 * f64::EPSILON * w.abs().max(1.0);
                    if armijo || roundoff {
                        let g_trial = gradient_unchecked(model, &trial);
                        let r_trial = linalg::norm_inf(&g_trial);
                        if armijo || r_trial < residual {
                            accepted = Some((trial, w_trial, g_trial, r_trial, t, is_newton));
                            break 'directions;
                        }
                    }
                }
                t *= cfg.shrink;
            }
        }

        match accepted {
            Some((trial, w_trial, g_trial, r_trial, t, is_newton)) => {
                trace.push(IterationRecord { iteration, residual_inf: residual, w, step: t, newton: is_newton });
                v = trial;
                w = w_trial;
                grad = g_trial;
                residual = r_trial;
            }
            None => {
                trace.push(IterationRecord { iteration, residual_inf: residual, w, step: 0.0, newton: false });
                return Err(Error::NoDescent { iteration, trace });
            }
        }
    }
    Err(Error::NonConvergence { iterations: cfg.max_iter, residual, trace })
}

/// Axis-aligned box of starting points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl StartBox {
    pub fn cube(n: usize, lower: f64, upper: f64) -> Self {
        Self { lower: vec![lower; n], upper: vec![upper; n] }
    }

    /// Deterministic uniform samples.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                self.lower
                    .iter()
                    .zip(&self.upper)
                    .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub all_converged_to_same: bool,
    /// Largest pairwise infinity-norm distance between the solutions.
    pub spread: f64,
    pub starts: usize,
    pub v_eq: Vec<f64>,
}

/// Distance below which two solutions count as the same point.
pub const SAME_POINT_TOL: f64 = 1e-8;

/// Multi-start uniqueness check: solves from `n_starts` random points in
/// `region` and reports the spread of the results.
pub fn uniqueness_probe(
    model: &GridModel,
    cfg: &SolverConfig,
    n_starts: usize,
    region: &StartBox,
    seed: u64,
) -> Result<ProbeResult> {
    if n_starts == 0 {
        return Err(Error::Validation("uniqueness probe needs at least one start".into()));
    }
    if region.lower.len() != model.n() || region.upper.len() != model.n() {
        return Err(Error::Dimension { expected: model.n(), got: region.lower.len() });
    }
    let starts = region.sample(n_starts, seed);
    let solutions = par::map(&starts, |start| {
        solve_equilibrium(model, &cfg.clone().with_initial(start.clone())).map(|r| r.v_eq)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut spread = 0.0_f64;
    for (i, a) in solutions.iter().enumerate() {
        for b in &solutions[i + 1..] {
            let d = a.iter().zip(b).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()));
            spread = spread.max(d);
        }
    }
    Ok(ProbeResult {
        all_converged_to_same: spread <= SAME_POINT_TOL,
        spread,
        starts: n_starts,
        v_eq: solutions[0].clone(),
    })
}

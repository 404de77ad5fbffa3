//! Dormand–Prince 5(4) embedded pair with an elementary step controller.

use nalgebra::DVector;

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (equal to the last stage row).
const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Difference between fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone)]
pub(crate) struct StepOutcome {
    pub y: DVector<f64>,
    /// Scaled RMS error; the step is acceptable when `<= 1`.
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerance {
    fn norm(&self, err: &DVector<f64>, y0: &DVector<f64>, y1: &DVector<f64>) -> f64 {
        let n = err.len().max(1) as f64;
        let sum: f64 = err
            .iter()
            .zip(y0.iter().zip(y1.iter()))
            .map(|(e, (a, b))| {
                let sc = self.atol + self.rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (sum / n).sqrt()
    }
}

/// One trial step of size `h` for the autonomous system `y' = f(y)`.
///
/// Returns `None` when a stage leaves the positive orthant or produces a
/// non-finite value.
pub(crate) fn dopri_step<F>(f: &mut F, y: &DVector<f64>, f0: &DVector<f64>, h: f64, tol: Tolerance) -> Option<StepOutcome>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    let n = y.len();
    let mut k: Vec<DVector<f64>> = Vec::with_capacity(7);
    k.push(f0.clone());
    let mut stage = DVector::zeros(n);
    for row in &A[1..] {
        stage.copy_from(y);
        for (kj, &a) in k.iter().zip(row) {
            if a != 0.0 {
                stage.axpy(h * a, kj, 1.0);
            }
        }
        if stage.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return None;
        }
        let mut ks = DVector::zeros(n);
        f(&stage, &mut ks);
        if ks.iter().any(|x| !x.is_finite()) {
            return None;
        }
        k.push(ks);
    }
    // Stage 7 is evaluated at the fifth-order solution, which is `stage` now.
    let y_new = stage;
    let mut err = DVector::zeros(n);
    for (j, kj) in k.iter().enumerate() {
        if E[j] != 0.0 {
            err.axpy(h * E[j], kj, 1.0);
        }
    }
    debug_assert!(B.iter().zip(A[6].iter()).all(|(b, a)| b == a));
    debug_assert_eq!(C[6], 1.0);
    let error = tol.norm(&err, y, &y_new);
    if !error.is_finite() {
        return None;
    }
    Some(StepOutcome { y: y_new, error })
}

/// Step-size multiplier for the next step.
pub(crate) fn step_factor(error: f64) -> f64 {
    const SAFETY: f64 = 0.9;
    if error == 0.0 {
        return 5.0;
    }
    (SAFETY * error.powf(-0.2)).clamp(0.2, 5.0)
}

/// Starting step size heuristic (Hairer, Nørsett & Wanner, II.4).
pub(crate) fn initial_step<F>(f: &mut F, y0: &DVector<f64>, f0: &DVector<f64>, tol: Tolerance, h_max: f64) -> f64
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>),
{
    let zero = DVector::zeros(y0.len());
    let d0 = tol.norm(y0, y0, &zero);
    let d1 = tol.norm(f0, y0, &zero);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(h_max);
    let y1 = y0 + f0 * h0;
    if y1.iter().any(|&x| !(x > 0.0)) {
        return h0 * 1e-3;
    }
    let mut f1 = DVector::zeros(y0.len());
    f(&y1, &mut f1);
    let d2 = tol.norm(&(&f1 - f0), y0, &zero) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(h_max)
}

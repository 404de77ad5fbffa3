#![allow(dead_code)]

use std::path::PathBuf;

use dcgrad_core::grid::{assemble_model, build_full_conductance, GridFile};
use dcgrad_core::{GridModel, Line, PerUnitBase, TerminalParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURES: [&str; 7] =
    ["flat", "scalar_load", "scalar_half", "two_node", "five_node", "all_generation", "microgrid10"];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> GridModel {
    GridFile::load(fixture_path(name)).unwrap().to_model().unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected network with `n` terminals, a master and a few passive
/// nodes. Powers lie in `p_range`, droop gains in `[0, 0.2]`.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, p_range: (f64, f64)) -> GridModel {
    let passive = rng.random_range(0..3usize);
    let total = 1 + n + passive;
    let mut lines = Vec::new();
    for node in 1..total {
        let parent = rng.random_range(0..node);
        lines.push(Line::per_unit(parent, node, rng.random_range(0.05..1.0)));
    }
    for _ in 0..rng.random_range(0..=n) {
        let a = rng.random_range(0..total);
        let b = rng.random_range(0..total);
        if a != b {
            lines.push(Line::per_unit(a, b, rng.random_range(0.05..1.0)));
        }
    }
    let full = build_full_conductance(&lines, &PerUnitBase::unit()).unwrap();
    let terminals = (1..=n)
        .map(|node| {
            TerminalParams::new(
                node,
                rng.random_range(p_range.0..p_range.1),
                rng.random_range(0.0..0.2),
                rng.random_range(1e-3..1e-2),
            )
        })
        .collect();
    assemble_model(&full, 0, terminals, rng.random_range(0.9..1.1), false).unwrap()
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// Potential written out term by term, independent of the library's
/// vectorised evaluation.
pub fn w_reference(model: &GridModel, v: &[f64]) -> f64 {
    let n = model.n();
    let g = model.g();
    let g0 = model.g0();
    let mut total = 0.0;
    for i in 0..n {
        let t = model.terminals()[i];
        total += -(t.p + t.k) * v[i].ln() + g0[i] * model.v0() * v[i] + 0.5 * t.k * v[i] * v[i];
        for j in 0..n {
            total += 0.5 * v[i] * g[(i, j)] * v[j];
        }
    }
    total
}

pub fn fd_gradient(model: &GridModel, v: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for i in 0..v.len() {
        let mut a: Vec<f64> = v.iter().copied().collect();
        let mut b = a.clone();
        a[i] += h;
        b[i] -= h;
        out[i] = (w_reference(model, &a) - w_reference(model, &b)) / (2.0 * h);
    }
    out
}

pub fn fd_hessian<F>(grad: F, v: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = v.len();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut a = v.clone();
        let mut b = v.clone();
        a[j] += h;
        b[j] -= h;
        let col = (grad(&a) - grad(&b)) / (2.0 * h);
        out.set_column(j, &col);
    }
    out
}

pub fn rel_err_vec(approx: &DVector<f64>, exact: &DVector<f64>) -> f64 {
    (approx - exact).amax() / exact.amax().max(1e-300)
}

pub fn rel_err_mat(approx: &DMatrix<f64>, exact: &DMatrix<f64>) -> f64 {
    (approx - exact).amax() / exact.amax().max(1e-300)
}

/// Smallest eigenvalue of a symmetric 1x1, 2x2 or 3x3 matrix in closed form.
pub fn lambda_min_closed_form(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
        }
        3 => {
            // Trigonometric solution of the characteristic cubic.
            let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
            let q = (m[(0, 0)] + m[(1, 1)] + m[(2, 2)]) / 3.0;
            if p1 == 0.0 {
                return m[(0, 0)].min(m[(1, 1)]).min(m[(2, 2)]);
            }
            let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = (m - DMatrix::identity(3, 3) * q) / p;
            let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos()
        }
        _ => panic!("closed form only for n <= 3"),
    }
}

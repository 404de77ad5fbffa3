mod common;

use common::*;
use dcgrad_core::grid::{assemble_model, build_full_conductance, kron_reduce, GridFile, Shunt};
use dcgrad_core::{solve_equilibrium, Error, Line, PerUnitBase, SolverConfig, TerminalParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

/// Random connected 5-node network with a small shunt at every node so the
/// full matrix is invertible.
fn grounded_network(seed: u64) -> DMatrix<f64> {
    let mut r = rng(seed);
    let mut lines = Vec::new();
    for node in 1..5 {
        lines.push(Line::per_unit(r.random_range(0..node), node, r.random_range(0.1..2.0)));
    }
    lines.push(Line::per_unit(0, 4, r.random_range(0.1..2.0)));
    let mut y = build_full_conductance(&lines, &PerUnitBase::unit()).unwrap();
    let shunts: Vec<Shunt> = (0..5).map(|node| Shunt { node, g_pu: r.random_range(0.01..0.5) }).collect();
    y.add_shunts(&shunts).unwrap();
    y.matrix
}

#[test]
fn kron_reduction_preserves_port_impedance() {
    for seed in 0..20 {
        let y = grounded_network(seed);
        let keep = [4, 1, 2];
        let reduced = kron_reduce(&y, &keep).unwrap();
        let z_full = y.clone().try_inverse().unwrap();
        let z_ports = z_full.select_rows(&keep).select_columns(&keep);
        let z_reduced = reduced.try_inverse().unwrap();
        assert!(rel_err_mat(&z_reduced, &z_ports) < 1e-12);
    }
}

#[test]
fn kron_reduction_is_order_independent() {
    for seed in 0..20 {
        let y = grounded_network(seed);
        let once = kron_reduce(&y, &[0, 1, 2]).unwrap();
        // Eliminate node 4 first, then node 3.
        let step = kron_reduce(&y, &[0, 1, 2, 3]).unwrap();
        let twice = kron_reduce(&step, &[0, 1, 2]).unwrap();
        assert!((once.clone() - twice).amax() <= 1e-12 * once.amax());
        // Node 3 first, then node 4.
        let step = kron_reduce(&y, &[0, 1, 2, 4]).unwrap();
        let twice = kron_reduce(&step, &[0, 1, 2]).unwrap();
        assert!((once.clone() - twice).amax() <= 1e-12 * once.amax());
    }
}

#[test]
fn kron_keep_order_permutes_result() {
    let y = grounded_network(3);
    let a = kron_reduce(&y, &[0, 1, 2]).unwrap();
    let b = kron_reduce(&y, &[2, 0, 1]).unwrap();
    let perm = [2, 0, 1];
    for i in 0..3 {
        for j in 0..3 {
            assert!((b[(i, j)] - a[(perm[i], perm[j])]).abs() < 1e-14 * a.amax());
        }
    }
}

#[test]
fn reduced_lossless_network_has_zero_row_sums() {
    // Without shunts, [g0 | G] rows sum to zero: a uniform voltage draws no current.
    let mut r = rng(9);
    for _ in 0..20 {
        let n = r.random_range(1..=8);
        let m = random_model(&mut r, n, (-0.5, 0.5));
        for i in 0..n {
            let sum: f64 = m.g().row(i).sum() + m.g0_grid()[i];
            assert!(sum.abs() < 1e-12 * m.g().amax(), "row {i} sums to {sum}");
        }
    }
}

#[test]
fn flat_fixture_is_a_null_equilibrium() {
    let m = fixture("flat");
    let v = DVector::from_element(m.n(), 1.0);
    let g = dcgrad_core::potential::gradient_w(&m, &v).unwrap();
    assert!(g.amax() < 1e-14);
    let eq = solve_equilibrium(&m, &SolverConfig::default()).unwrap();
    assert!(eq.v_eq.iter().all(|&x| (x - 1.0).abs() <= 1e-12));
}

#[test]
fn all_fixtures_load_and_are_positive_definite() {
    for name in FIXTURES {
        let m = fixture(name);
        assert!(dcgrad_core::linalg::lambda_min(m.g()) > 0.0, "{name}");
    }
}

#[test]
fn microgrid_fixture_uses_volt_and_kilowatt_base() {
    let file = GridFile::load(fixture_path("microgrid10")).unwrap();
    let base = file.per_unit_base().unwrap();
    assert!((base.r_base() - 144.4).abs() < 1e-12);
    let m = file.to_model().unwrap();
    assert_eq!(m.n(), 9);
    // The passive junction is eliminated and does not become a terminal.
    assert!(m.terminal_index(10).is_none());
}

fn with_lines(lines: &str) -> String {
    format!(
        r#"{{"base": {{"v_volts": 1.0, "s_watts": 1.0}},
            "master": {{"id": 0, "v0_pu": 1.0}},
            "lines": {lines},
            "terminals": [{{"node": 1, "p_pu": 0.0, "k_pu": 0.0, "c_pu": 1.0}}]}}"#
    )
}

#[test]
fn disconnected_graph_names_the_unreachable_nodes() {
    let text = with_lines(r#"[{"from": 0, "to": 1, "r_pu": 1.0}, {"from": 5, "to": 6, "r_pu": 1.0}]"#);
    let err = GridFile::from_json(&text).unwrap().to_model().unwrap_err();
    match err {
        Error::Disconnected { root, component } => {
            assert_eq!(root, 0);
            assert_eq!(component, vec![5, 6]);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn negative_resistance_names_the_line() {
    let text = with_lines(r#"[{"from": 0, "to": 1, "r_pu": -0.5}]"#);
    let err = GridFile::from_json(&text).unwrap().to_model().unwrap_err();
    assert!(matches!(err, Error::NonPositiveResistance { from: 0, to: 1, .. }));
    assert!(err.to_string().contains("line 0-1"));
}

#[test]
fn floating_passive_block_is_reported() {
    // Node 2 has no connections, so the block to eliminate is zero.
    let y = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(matches!(kron_reduce(&y, &[0, 1]), Err(Error::SingularEliminatedBlock { nodes }) if nodes == vec![2]));
}

#[test]
fn terminal_on_unknown_node_is_rejected() {
    let full = build_full_conductance(&[Line::per_unit(0, 1, 1.0)], &PerUnitBase::unit()).unwrap();
    let err = assemble_model(&full, 0, vec![TerminalParams::new(7, 0.0, 0.0, 1.0)], 1.0, false).unwrap_err();
    assert!(err.to_string().contains("terminal node 7"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn line_order_does_not_change_the_model(seed in any::<u64>(), n in 1usize..7) {
        let mut r = rng(seed);
        let mut lines = Vec::new();
        for node in 1..=n + 1 {
            lines.push(Line::per_unit(r.random_range(0..node), node, r.random_range(0.05..1.0)));
        }
        let terminals: Vec<_> = (1..=n).map(|i| TerminalParams::new(i, 0.1, 0.0, 1.0)).collect();
        let base = PerUnitBase::unit();
        let a = assemble_model(&build_full_conductance(&lines, &base).unwrap(), 0, terminals.clone(), 1.0, false).unwrap();
        lines.shuffle(&mut r);
        let b = assemble_model(&build_full_conductance(&lines, &base).unwrap(), 0, terminals, 1.0, false).unwrap();
        prop_assert!((a.g() - b.g()).amax() <= 1e-12 * a.g().amax());
        prop_assert!((a.g0_grid() - b.g0_grid()).amax() <= 1e-12 * a.g().amax());
    }

    #[test]
    fn per_unit_conversion_round_trips(v in 1.0f64..1e5, s in 1.0f64..1e7, r_ohm in 1e-4f64..1e3) {
        let base = PerUnitBase::new(v, s).unwrap();
        let back = base.resistance_to_pu(r_ohm) * base.r_base();
        prop_assert!((back - r_ohm).abs() <= 1e-12 * r_ohm);
    }
}

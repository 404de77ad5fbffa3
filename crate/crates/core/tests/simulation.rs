mod common;

use common::*;
use dcgrad_core::equilibrium::StartBox;
use dcgrad_core::sim::{
    lyapunov_monitor, run_protection_scenario, EventKind, Sag, SwitchAction, SwitchChange, TerminalOverride,
};
use dcgrad_core::{
    estimate_roa, simulate, solve_equilibrium, DroopVariant, GridModel, IntegratorConfig, RoaConfig, Scenario,
    SolverConfig,
};
use nalgebra::DVector;

const GC: DroopVariant = DroopVariant::GradientConsistent;

fn equilibrium(m: &GridModel) -> DVector<f64> {
    solve_equilibrium(m, &SolverConfig::default()).unwrap().v()
}

#[test]
fn equilibrium_start_stays_put() {
    for name in ["two_node", "five_node", "microgrid10"] {
        let m = fixture(name);
        let eq = equilibrium(&m);
        let traj = simulate(&m, &Scenario::new(eq.iter().copied().collect(), 0.05), GC, &Default::default()).unwrap();
        assert!(!traj.diverged);
        for s in &traj.samples {
            let d = s.v.iter().zip(eq.iter()).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(d < 1e-10, "{name}: drift {d} at t={}", s.t);
        }
    }
}

#[test]
fn random_starts_converge_with_decreasing_potential() {
    let m = fixture("five_node");
    let eq = solve_equilibrium(&m, &SolverConfig::default()).unwrap();
    let roa = estimate_roa(&m, &eq, &RoaConfig::default()).unwrap();
    let region = StartBox { lower: roa.v_min.iter().map(|v| v + 0.05).collect(), upper: vec![1.5; 5] };
    for start in region.sample(10, 3) {
        let traj = simulate(&m, &Scenario::new(start, 0.2), GC, &Default::default()).unwrap();
        assert!(!traj.diverged);
        assert!(traj.events.is_empty());
        assert!(lyapunov_monitor(&traj).monotone);
        assert!(traj.final_error(&eq.v()) <= 1e-6);
    }
}

#[test]
fn lyapunov_value_tends_to_zero() {
    let m = fixture("two_node");
    let traj = simulate(&m, &Scenario::new(vec![0.5, 1.4], 0.2), GC, &Default::default()).unwrap();
    let first = traj.samples.first().unwrap().lyapunov;
    let last = traj.samples.last().unwrap().lyapunov;
    assert!(first > 0.0);
    assert!(last.abs() < 1e-10);
}

#[test]
fn start_far_below_the_region_diverges() {
    let m = fixture("two_node");
    let traj = simulate(&m, &Scenario::new(vec![0.1, 0.1], 0.1), GC, &Default::default()).unwrap();
    assert!(traj.diverged);
    let ev = traj.events_of(EventKind::Diverged).next().unwrap();
    assert!(ev.t < 0.1);
    assert_eq!(traj.final_time(), ev.t);
}

#[test]
fn runs_are_bit_identical() {
    let m = fixture("microgrid10");
    let eq = solve_equilibrium(&m, &SolverConfig::default()).unwrap();
    let roa = estimate_roa(&m, &eq, &RoaConfig::default()).unwrap();
    let sag = Sag { v0_low: 0.2, t_start: 0.0, t_end: 0.05, horizon: 0.1 };
    let a = run_protection_scenario(&m, &eq, &roa, &sag, GC, &Default::default()).unwrap();
    let b = run_protection_scenario(&m, &eq, &roa, &sag, GC, &Default::default()).unwrap();
    // Debug output compares NaN references as equal, unlike PartialEq.
    assert!(format!("{a:?}") == format!("{b:?}"));
}

#[test]
fn halving_tolerances_changes_little() {
    let m = fixture("five_node");
    let start = vec![0.6, 1.3, 0.7, 1.2, 0.8];
    let loose = IntegratorConfig::default();
    let tight = IntegratorConfig { rtol: loose.rtol / 2.0, atol: loose.atol / 2.0, ..loose.clone() };
    let a = simulate(&m, &Scenario::new(start.clone(), 0.004), GC, &loose).unwrap();
    let b = simulate(&m, &Scenario::new(start, 0.004), GC, &tight).unwrap();
    let d = (a.final_state() - b.final_state()).amax();
    assert!(d < 10.0 * loose.rtol, "difference {d}");
}

#[test]
fn island_switch_moves_to_island_equilibrium() {
    let m = fixture("all_generation");
    let eq = equilibrium(&m);
    let mut sc = Scenario::new(eq.iter().copied().collect(), 0.3);
    sc.island_schedule.push(SwitchChange { t: 0.01, action: SwitchAction::Open });
    let traj = simulate(&m, &sc, GC, &Default::default()).unwrap();
    assert_eq!(traj.events_of(EventKind::Island).count(), 1);
    let island_eq = equilibrium(&m.with_island(true));
    assert!(traj.final_error(&island_eq) < 1e-6);
    assert!(lyapunov_monitor(&traj).monotone);
}

#[test]
fn override_moves_to_new_set_point() {
    let m = fixture("two_node");
    let eq = equilibrium(&m);
    let mut sc = Scenario::new(eq.iter().copied().collect(), 0.2);
    sc.terminal_overrides.push(TerminalOverride { t: 0.02, terminal: 1, p: Some(0.0), k: None });
    let traj = simulate(&m, &sc, GC, &Default::default()).unwrap();
    let ev: Vec<_> = traj.events_of(EventKind::Override).collect();
    assert_eq!(ev.len(), 1);
    assert_eq!(ev[0].node, Some(7));
    let k = m.terminals()[1].k;
    let target = equilibrium(&m.with_terminal_pk(1, 0.0, k));
    assert!(traj.final_error(&target) < 1e-6);
    // The scheduled time is a sample and starts a new segment.
    let at = traj.samples.iter().find(|s| s.t == 0.02).expect("breakpoint sampled");
    assert_eq!(at.segment, 0);
    assert!(traj.samples.last().unwrap().segment >= 1);
}

#[test]
fn protection_trips_loads_and_recovers() {
    let m = fixture("two_node");
    let eq = solve_equilibrium(&m, &SolverConfig::default()).unwrap();
    let roa = estimate_roa(&m, &eq, &RoaConfig::default()).unwrap();
    let sag = Sag { v0_low: 0.2, t_start: 0.0, t_end: 0.05, horizon: 0.1 };
    let out = run_protection_scenario(&m, &eq, &roa, &sag, GC, &Default::default()).unwrap();
    assert!(out.unprotected.diverged);
    assert!(!out.protected.diverged);
    let trip = out.protected.events_of(EventKind::Disconnect).next().unwrap();
    assert_eq!(trip.node, Some(4));
    // The trip is located where the load voltage meets its threshold.
    let sample = out.protected.samples.iter().find(|s| s.t == trip.t).unwrap();
    assert!((sample.v[0] - roa.v_min[0]).abs() < 1e-6);
    let reconnect = out.protected.events_of(EventKind::Reconnect).next().unwrap();
    assert!(reconnect.t >= 0.05);
    assert!(out.recovery_error.unwrap() <= 1e-3);
}

#[test]
fn paper_variant_monitor_is_advisory() {
    let m = fixture("two_node");
    let traj = simulate(&m, &Scenario::new(vec![0.6, 1.2], 0.05), DroopVariant::LinearDroop, &Default::default()).unwrap();
    assert!(lyapunov_monitor(&traj).advisory);
}

#[test]
fn csv_and_event_exports() {
    let m = fixture("two_node");
    let eq = equilibrium(&m);
    let sc = Scenario::new(eq.iter().copied().collect(), 0.02).with_sag(0.8, 0.005, 0.01, 1.0);
    let traj = simulate(&m, &sc, GC, &Default::default()).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,v1,v2,W,V,mask");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 6);
    assert_eq!(row[5], "11");
    assert_eq!(text.lines().count(), traj.samples.len() + 1);
    let events: serde_json::Value = serde_json::from_str(&traj.events_json().unwrap()).unwrap();
    assert_eq!(events[0]["kind"], "sag-start");
    assert_eq!(events[1]["kind"], "sag-end");
    assert_eq!(events[1]["t"], 0.01);
}

#[test]
fn sample_times_strictly_increase() {
    let m = fixture("microgrid10");
    let eq = solve_equilibrium(&m, &SolverConfig::default()).unwrap();
    let roa = estimate_roa(&m, &eq, &RoaConfig::default()).unwrap();
    let sag = Sag { v0_low: 0.2, t_start: 0.0, t_end: 0.05, horizon: 0.1 };
    let out = run_protection_scenario(&m, &eq, &roa, &sag, GC, &Default::default()).unwrap();
    for traj in [&out.protected, &out.unprotected] {
        assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
    }
    assert_eq!(out.protected.final_time(), 0.1);
}

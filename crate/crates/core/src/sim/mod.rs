//! Transient simulation of the nodal dynamics with scripted events and local
//! under-voltage protection.
//!
//! Scheduled changes (master voltage, grid switch, terminal set-points) land
//! exactly on step boundaries. State events (protection trips, reconnections,
//! divergence) are located by bisecting the step length until the crossing is
//! bracketed to `event_tol` seconds. A disconnected terminal keeps its
//! capacitor but injects nothing (`p = k = 0`).

mod integrator;
mod protection;
mod trajectory;

pub use protection::{run_protection_scenario, ProtectionOutcome, Sag};
pub use trajectory::{lyapunov_monitor, Event, EventKind, MonitorReport, Sample, Trajectory};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{solve_equilibrium, SolverConfig};
use crate::error::{Error, Result};
use crate::grid::GridModel;
use crate::potential::{check_voltage, potential_unchecked, rhs_into, DroopVariant};
use integrator::{dopri_step, initial_step, step_factor, Tolerance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step; `None` uses 1/200 of the horizon.
    pub max_step: Option<f64>,
    pub v_max: f64,
    pub v_min_hard: f64,
    /// Width of the bracket around a located state event, seconds.
    pub event_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            max_step: None,
            v_max: 1e3,
            v_min_hard: 1e-6,
            event_tol: 1e-9,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorConfig {
    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.event_tol > 0.0) {
            return Err(Error::Validation("integrator tolerances must be positive".into()));
        }
        if !(self.v_min_hard > 0.0 && self.v_max > self.v_min_hard) {
            return Err(Error::Validation("divergence band must satisfy 0 < v_min_hard < v_max".into()));
        }
        if matches!(self.max_step, Some(h) if !(h > 0.0)) {
            return Err(Error::Validation("max_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V0Change {
    pub t: f64,
    pub v0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchAction {
    Open,
    Close,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchChange {
    pub t: f64,
    pub action: SwitchAction,
}

/// New set-point for terminal `terminal` (row index) from time `t` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalOverride {
    pub t: f64,
    pub terminal: usize,
    pub p: Option<f64>,
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protection {
    pub enabled: bool,
    /// Per-terminal trip threshold; 0 disables tripping for that terminal.
    pub v_min: Vec<f64>,
    /// A tripped terminal reconnects once its voltage reaches this level.
    pub reconnect_v: f64,
    /// Minimum time a tripped terminal stays off, seconds.
    pub lockout: f64,
}

impl Default for Protection {
    fn default() -> Self {
        Self { enabled: false, v_min: Vec::new(), reconnect_v: 0.9, lockout: 1e-3 }
    }
}

impl Protection {
    pub fn with_thresholds(v_min: Vec<f64>) -> Self {
        Self { enabled: true, v_min, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub t_end: f64,
    pub initial_v: Vec<f64>,
    pub v0_schedule: Vec<V0Change>,
    pub island_schedule: Vec<SwitchChange>,
    pub terminal_overrides: Vec<TerminalOverride>,
    pub protection: Protection,
}

impl Scenario {
    pub fn new(initial_v: Vec<f64>, t_end: f64) -> Self {
        Self {
            t_end,
            initial_v,
            v0_schedule: Vec::new(),
            island_schedule: Vec::new(),
            terminal_overrides: Vec::new(),
            protection: Protection::default(),
        }
    }

    /// Drops the master voltage to `v0_low` on `[t_start, t_end)` and restores
    /// `v0_nominal` afterwards.
    pub fn with_sag(mut self, v0_low: f64, t_start: f64, t_end: f64, v0_nominal: f64) -> Self {
        self.v0_schedule.push(V0Change { t: t_start, v0: v0_low });
        self.v0_schedule.push(V0Change { t: t_end, v0: v0_nominal });
        self
    }

    pub fn with_protection(mut self, protection: Protection) -> Self {
        self.protection = protection;
        self
    }

    fn validate(&self, model: &GridModel) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Validation(format!("t_end must be positive, got {}", self.t_end)));
        }
        check_voltage(model, &DVector::from_column_slice(&self.initial_v))?;
        let sorted = |ts: &mut dyn Iterator<Item = f64>, what: &str| -> Result<()> {
            let mut last = 0.0;
            for t in ts {
                if !(t >= last && t <= self.t_end) {
                    return Err(Error::Validation(format!(
                        "{what}: times must be sorted and within [0, t_end], got {t}"
                    )));
                }
                last = t;
            }
            Ok(())
        };
        sorted(&mut self.v0_schedule.iter().map(|c| c.t), "v0_schedule")?;
        sorted(&mut self.island_schedule.iter().map(|c| c.t), "island_schedule")?;
        sorted(&mut self.terminal_overrides.iter().map(|c| c.t), "terminal_overrides")?;
        if self.v0_schedule.iter().any(|c| !(c.v0 >= 0.0 && c.v0.is_finite())) {
            return Err(Error::Validation("v0_schedule: voltages must be >= 0".into()));
        }
        for o in &self.terminal_overrides {
            if o.terminal >= model.n() {
                return Err(Error::Validation(format!("override references terminal {}", o.terminal)));
            }
            if matches!(o.k, Some(k) if !(k >= 0.0)) || matches!(o.p, Some(p) if !p.is_finite()) {
                return Err(Error::Validation("override: p must be finite and k >= 0".into()));
            }
        }
        let p = &self.protection;
        if p.enabled {
            if p.v_min.len() != model.n() {
                return Err(Error::Dimension { expected: model.n(), got: p.v_min.len() });
            }
            if p.v_min.iter().any(|v| !(*v >= 0.0)) || !(p.reconnect_v > 0.0) || !(p.lockout >= 0.0) {
                return Err(Error::Validation("protection thresholds must be non-negative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Action {
    V0(f64),
    Switch(SwitchAction),
    Override(TerminalOverride),
}

/// Mutable operating point layered over the immutable base model.
struct OperatingPoint<'a> {
    base: &'a GridModel,
    v0: f64,
    island: bool,
    p_set: Vec<f64>,
    k_set: Vec<f64>,
    connected: Vec<bool>,
    trip_time: Vec<f64>,
}

impl<'a> OperatingPoint<'a> {
    fn new(base: &'a GridModel) -> Self {
        let n = base.n();
        Self {
            base,
            v0: base.v0(),
            island: base.island(),
            p_set: base.terminals().iter().map(|t| t.p).collect(),
            k_set: base.terminals().iter().map(|t| t.k).collect(),
            connected: vec![true; n],
            trip_time: vec![f64::NEG_INFINITY; n],
        }
    }

    fn model(&self) -> GridModel {
        let mut m = self.base.with_v0(self.v0).with_island(self.island);
        for i in 0..self.base.n() {
            let (p, k) = if self.connected[i] { (self.p_set[i], self.k_set[i]) } else { (0.0, 0.0) };
            m = m.with_terminal_pk(i, p, k);
        }
        m
    }
}

/// Potential of the active model relative to its minimum, when one exists.
fn segment_reference(model: &GridModel) -> f64 {
    match solve_equilibrium(model, &SolverConfig::default()) {
        Ok(eq) => eq.w_at_eq,
        Err(_) => f64::NAN,
    }
}

struct Recorder {
    samples: Vec<Sample>,
    events: Vec<Event>,
    segment: usize,
    w_ref: f64,
}

impl Recorder {
    fn push(&mut self, t: f64, v: &DVector<f64>, model: &GridModel, connected: &[bool]) {
        let w = potential_unchecked(model, v);
        if let Some(last) = self.samples.last() {
            if t <= last.t {
                return;
            }
        }
        self.samples.push(Sample {
            t,
            v: v.iter().copied().collect(),
            w,
            lyapunov: w - self.w_ref,
            connected: connected.to_vec(),
            segment: self.segment,
        });
    }

    fn event(&mut self, t: f64, kind: EventKind, node: Option<usize>, detail: Option<String>) {
        log::debug!("t={t:.9}: {kind:?} {node:?}");
        self.events.push(Event { t, kind, node, detail });
    }

    fn new_segment(&mut self, model: &GridModel) {
        self.segment += 1;
        self.w_ref = segment_reference(model);
    }
}

/// Largest step inside the real-axis stability interval of the explicit
/// pair, from a Gershgorin bound on the spectrum of `C⁻¹ ∇²W`.
fn stability_step(model: &GridModel, v: &DVector<f64>) -> f64 {
    const REAL_AXIS_LIMIT: f64 = 3.0;
    let g = model.g();
    let mut rho = 0.0_f64;
    for (i, t) in model.terminals().iter().enumerate() {
        let diag = (g[(i, i)] + (t.p + t.k) / (v[i] * v[i]) + t.k).abs();
        let off: f64 = (0..model.n())
            .filter(|&j| j != i)
            .map(|j| g[(i, j)].abs() / (t.c * model.terminals()[j].c).sqrt())
            .sum();
        rho = rho.max(diag / t.c + off);
    }
    if rho > 0.0 { REAL_AXIS_LIMIT / rho } else { f64::INFINITY }
}

/// State events detected between the start and the end of a trial step.
#[derive(Debug, Default)]
struct Triggers {
    diverged: Option<String>,
    trips: Vec<usize>,
    reconnects: Vec<usize>,
}

impl Triggers {
    fn any(&self) -> bool {
        self.diverged.is_some() || !self.trips.is_empty() || !self.reconnects.is_empty()
    }
}

fn detect(
    y: &DVector<f64>,
    t_start: f64,
    op: &OperatingPoint,
    protection: &Protection,
    cfg: &IntegratorConfig,
) -> Triggers {
    let mut out = Triggers::default();
    if let Some(i) = y.iter().position(|&v| !(v.is_finite() && v >= cfg.v_min_hard && v <= cfg.v_max)) {
        out.diverged = Some(format!("terminal {} left [{:e}, {:e}]", op.base.terminals()[i].node, cfg.v_min_hard, cfg.v_max));
    }
    if protection.enabled {
        for i in 0..y.len() {
            if op.connected[i] {
                if protection.v_min[i] > 0.0 && y[i] < protection.v_min[i] {
                    out.trips.push(i);
                }
            } else if t_start >= op.trip_time[i] + protection.lockout && y[i] >= protection.reconnect_v {
                out.reconnects.push(i);
            }
        }
    }
    out
}

/// Integrates the dynamics over `[0, scenario.t_end]`.
pub fn simulate(
    model: &GridModel,
    scenario: &Scenario,
    variant: DroopVariant,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    scenario.validate(model)?;
    let t_end = scenario.t_end;
    let h_max = cfg.max_step.unwrap_or(t_end / 200.0);
    let tol = Tolerance { rtol: cfg.rtol, atol: cfg.atol };
    let protection = &scenario.protection;
    let node_ids: Vec<usize> = model.terminals().iter().map(|t| t.node).collect();

    let mut schedule: Vec<(f64, Action)> = Vec::new();
    schedule.extend(scenario.v0_schedule.iter().map(|c| (c.t, Action::V0(c.v0))));
    schedule.extend(scenario.island_schedule.iter().map(|c| (c.t, Action::Switch(c.action))));
    schedule.extend(scenario.terminal_overrides.iter().map(|o| (o.t, Action::Override(*o))));
    // Stable sort keeps the per-list order for simultaneous entries.
    schedule.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut next_action = 0;

    let mut op = OperatingPoint::new(model);
    let nominal_v0 = model.v0();
    let mut rec = Recorder { samples: Vec::new(), events: Vec::new(), segment: 0, w_ref: f64::NAN };

    let apply_scheduled = |t: f64, next: &mut usize, op: &mut OperatingPoint, rec: &mut Recorder| -> bool {
        let mut changed = false;
        while *next < schedule.len() && schedule[*next].0 <= t {
            match schedule[*next].1 {
                Action::V0(v0) => {
                    let kind = if v0 < nominal_v0 { EventKind::SagStart } else { EventKind::SagEnd };
                    rec.event(t, kind, None, Some(format!("v0={v0}")));
                    op.v0 = v0;
                }
                Action::Switch(SwitchAction::Open) => {
                    rec.event(t, EventKind::Island, None, None);
                    op.island = true;
                }
                Action::Switch(SwitchAction::Close) => {
                    rec.event(t, EventKind::GridConnect, None, None);
                    op.island = false;
                }
                Action::Override(o) => {
                    if let Some(p) = o.p {
                        op.p_set[o.terminal] = p;
                    }
                    if let Some(k) = o.k {
                        op.k_set[o.terminal] = k;
                    }
                    rec.event(t, EventKind::Override, Some(op.base.terminals()[o.terminal].node), None);
                }
            }
            *next += 1;
            changed = true;
        }
        changed
    };

    let apply_triggers = |t: f64, trig: &Triggers, op: &mut OperatingPoint, rec: &mut Recorder| {
        for &i in &trig.trips {
            op.connected[i] = false;
            op.trip_time[i] = t;
            rec.event(t, EventKind::Disconnect, Some(op.base.terminals()[i].node), None);
        }
        for &i in &trig.reconnects {
            op.connected[i] = true;
            rec.event(t, EventKind::Reconnect, Some(op.base.terminals()[i].node), None);
        }
    };

    let mut t = 0.0_f64;
    let mut y = DVector::from_column_slice(&scenario.initial_v);

    apply_scheduled(t, &mut next_action, &mut op, &mut rec);
    let initial = detect(&y, t, &op, protection, cfg);
    apply_triggers(t, &initial, &mut op, &mut rec);
    let mut active = op.model();
    rec.w_ref = segment_reference(&active);
    rec.push(t, &y, &active, &op.connected);
    let mut diverged = false;
    if let Some(reason) = initial.diverged {
        rec.event(t, EventKind::Diverged, None, Some(reason));
        diverged = true;
    }

    let mut f0 = DVector::zeros(model.n());
    let mut h = {
        let mut rhs = |v: &DVector<f64>, out: &mut DVector<f64>| rhs_into(&active, v, variant, out);
        rhs(&y, &mut f0);
        initial_step(&mut rhs, &y, &f0, tol, h_max)
    };
    let mut steps = 0usize;

    while !diverged && t < t_end {
        steps += 1;
        if steps > cfg.max_steps {
            rec.event(t, EventKind::Diverged, None, Some("step limit reached".into()));
            diverged = true;
            break;
        }
        // Next breakpoint: scheduled action, lockout expiry or the horizon.
        let mut t_break = t_end;
        if next_action < schedule.len() {
            t_break = t_break.min(schedule[next_action].0);
        }
        if protection.enabled {
            for i in 0..model.n() {
                let expiry = op.trip_time[i] + protection.lockout;
                if !op.connected[i] && expiry > t {
                    t_break = t_break.min(expiry);
                }
            }
        }
        let mut h_try = h.min(h_max).min(stability_step(&active, &y));
        let lands_on_break = t + h_try >= t_break;
        if lands_on_break {
            h_try = t_break - t;
        }

        let h_min = 1e-14 * t.abs().max(1e-3);
        let mut rhs = |v: &DVector<f64>, out: &mut DVector<f64>| rhs_into(&active, v, variant, out);
        rhs(&y, &mut f0);
        let outcome = dopri_step(&mut rhs, &y, &f0, h_try, tol);
        let accepted = match outcome {
            Some(step) if step.error <= 1.0 => step,
            other => {
                let factor = other.map_or(0.2, |s| step_factor(s.error).min(0.9));
                h = h_try * factor;
                if h < h_min {
                    rec.event(t, EventKind::Diverged, None, Some("step size underflow".into()));
                    diverged = true;
                }
                continue;
            }
        };

        let trig = detect(&accepted.y, t, &op, protection, cfg);
        let (t_new, y_new, fired) = if trig.any() {
            // Shrink the step until the first crossing is bracketed.
            let (mut lo, mut hi) = (0.0, h_try);
            let mut y_hi = accepted.y.clone();
            let mut trig_hi = trig;
            while hi - lo > cfg.event_tol {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                match dopri_step(&mut rhs, &y, &f0, mid, tol) {
                    Some(step) => {
                        let trig_mid = detect(&step.y, t, &op, protection, cfg);
                        if trig_mid.any() {
                            hi = mid;
                            y_hi = step.y;
                            trig_hi = trig_mid;
                        } else {
                            lo = mid;
                        }
                    }
                    None => hi = mid,
                }
            }
            let t_hit = if hi == h_try && lands_on_break { t_break } else { t + hi };
            (t_hit, y_hi, Some(trig_hi))
        } else {
            let t_next = if lands_on_break { t_break } else { t + h_try };
            (t_next, accepted.y.clone(), None)
        };
        h = h_try * step_factor(accepted.error);

        t = t_new;
        y = y_new;
        rec.push(t, &y, &active, &op.connected);

        let mut changed = false;
        if let Some(trig) = fired {
            if let Some(reason) = &trig.diverged {
                rec.event(t, EventKind::Diverged, None, Some(reason.clone()));
                diverged = true;
                break;
            }
            apply_triggers(t, &trig, &mut op, &mut rec);
            changed = true;
        }
        if apply_scheduled(t, &mut next_action, &mut op, &mut rec) {
            changed = true;
        }
        // Lockout expiry with the voltage already above the reconnect level.
        let late = detect(&y, t, &op, protection, cfg);
        if !late.trips.is_empty() || !late.reconnects.is_empty() {
            apply_triggers(t, &Triggers { diverged: None, ..late }, &mut op, &mut rec);
            changed = true;
        }
        if changed {
            active = op.model();
            rec.new_segment(&active);
        }
    }

    Ok(Trajectory { node_ids, variant, samples: rec.samples, events: rec.events, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TerminalParams;
    use nalgebra::DMatrix;

    fn scalar(p: f64) -> GridModel {
        GridModel::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -1.0),
            1.0,
            vec![TerminalParams::new(1, p, 0.0, 0.01)],
            false,
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_is_invariant() {
        let m = scalar(-0.1875);
        let traj = simulate(&m, &Scenario::new(vec![0.75], 0.5), DroopVariant::GradientConsistent, &Default::default())
            .unwrap();
        assert!(!traj.diverged);
        for s in &traj.samples {
            assert!((s.v[0] - 0.75).abs() <= 1e-8, "{} at {}", s.v[0], s.t);
        }
        assert_eq!(traj.final_time(), 0.5);
    }

    #[test]
    fn times_strictly_increase() {
        let m = scalar(-0.1875);
        let sc = Scenario::new(vec![0.9], 0.2).with_sag(0.9, 0.05, 0.1, 1.0);
        let traj = simulate(&m, &sc, DroopVariant::GradientConsistent, &Default::default()).unwrap();
        assert!(traj.samples.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(traj.events_of(EventKind::SagStart).count(), 1);
        assert_eq!(traj.events_of(EventKind::SagEnd).count(), 1);
        assert!(traj.samples.iter().any(|s| s.t == 0.05));
    }

    #[test]
    fn collapse_is_flagged() {
        let m = scalar(-0.1875);
        // Below the unstable branch at 0.25 the voltage collapses.
        let traj = simulate(&m, &Scenario::new(vec![0.2], 1.0), DroopVariant::GradientConsistent, &Default::default())
            .unwrap();
        assert!(traj.diverged);
        assert_eq!(traj.events.last().unwrap().kind, EventKind::Diverged);
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let m = scalar(-0.1875);
        let mut sc = Scenario::new(vec![0.75], 0.2);
        sc.v0_schedule = vec![V0Change { t: 0.1, v0: 1.0 }, V0Change { t: 0.05, v0: 1.0 }];
        assert!(simulate(&m, &sc, DroopVariant::GradientConsistent, &Default::default()).is_err());
        let sc = Scenario::new(vec![-0.75], 0.2);
        assert!(simulate(&m, &sc, DroopVariant::GradientConsistent, &Default::default()).is_err());
    }

    #[test]
    fn trip_and_reconnect_are_located() {
        let m = scalar(-0.1875);
        let protection = Protection { lockout: 1e-3, ..Protection::with_thresholds(vec![0.5]) };
        let sc = Scenario::new(vec![0.75], 0.3).with_sag(0.3, 0.01, 0.1, 1.0).with_protection(protection);
        let traj = simulate(&m, &sc, DroopVariant::GradientConsistent, &Default::default()).unwrap();
        assert!(!traj.diverged);
        let trip = traj.events_of(EventKind::Disconnect).next().expect("trip");
        let reconnect = traj.events_of(EventKind::Reconnect).next().expect("reconnect");
        assert!(trip.t > 0.01 && trip.t < 0.1);
        assert!(reconnect.t > 0.1);
        // The sample at the trip time sits just below the threshold.
        let at_trip = traj.samples.iter().find(|s| s.t == trip.t).unwrap();
        assert!(at_trip.v[0] < 0.5 && at_trip.v[0] > 0.5 - 1e-6);
        assert!((traj.final_state()[0] - 0.75).abs() < 1e-6);
    }
}

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::potential::DroopVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Disconnect,
    Reconnect,
    SagStart,
    SagEnd,
    Island,
    GridConnect,
    Override,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    /// Node id of the terminal involved, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub v: Vec<f64>,
    /// Potential of the model active at this sample.
    pub w: f64,
    /// `W − min W` of the active model; NaN when that model has no equilibrium.
    pub lyapunov: f64,
    pub connected: Vec<bool>,
    /// Index of the event-free segment the sample belongs to. A sample taken
    /// at an event time belongs to the segment before the event.
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub node_ids: Vec<usize>,
    pub variant: DroopVariant,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.samples.last().expect("trajectory has samples").v)
    }

    pub fn final_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn events_of(&self, kind: EventKind) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// Infinity-norm distance of the final state from `target`.
    pub fn final_error(&self, target: &DVector<f64>) -> f64 {
        (self.final_state() - target).amax()
    }

    /// First time at which the state is within `tol` of `target` and stays
    /// there until the end.
    pub fn settling_time(&self, target: &DVector<f64>, tol: f64) -> Option<f64> {
        let mut settled = None;
        for s in &self.samples {
            let d = s.v.iter().zip(target.iter()).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
            if d <= tol {
                settled.get_or_insert(s.t);
            } else {
                settled = None;
            }
        }
        settled
    }

    /// CSV with header `t,v1,..,vn,W,V,mask`; `mask` is one 0/1 character per
    /// terminal (1 = connected).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.node_ids.len();
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",v{i}"));
        }
        header.push_str(",W,V,mask");
        writeln!(out, "{header}")?;
        for s in &self.samples {
            let mut line = format!("{:e}", s.t);
            for v in &s.v {
                line.push_str(&format!(",{v:e}"));
            }
            let mask: String = s.connected.iter().map(|&c| if c { '1' } else { '0' }).collect();
            line.push_str(&format!(",{:e},{:e},{mask}", s.w, s.lyapunov));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn events_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.events)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub monotone: bool,
    pub max_increase: f64,
    /// True when the run does not use the gradient-consistent model, in which
    /// case a decrease is not guaranteed and the report is informational.
    pub advisory: bool,
}

/// Checks that `V` does not increase between consecutive samples of the same
/// event-free segment, up to `1e-8 · max(1, |V|)` at the segment start.
pub fn lyapunov_monitor(traj: &Trajectory) -> MonitorReport {
    let mut max_increase = f64::NEG_INFINITY;
    let mut monotone = true;
    let mut tol = 1e-8;
    let mut current_segment = usize::MAX;
    for pair in traj.samples.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.segment != current_segment {
            current_segment = a.segment;
            let scale = if a.lyapunov.is_finite() { a.lyapunov.abs() } else { 0.0 };
            tol = 1e-8 * scale.max(1.0);
        }
        if a.segment != b.segment {
            continue;
        }
        // Differences of W equal differences of V within a segment.
        let increase = b.w - a.w;
        max_increase = max_increase.max(increase);
        if increase > tol {
            monotone = false;
        }
    }
    MonitorReport {
        monotone,
        max_increase: if max_increase.is_finite() { max_increase } else { 0.0 },
        advisory: traj.variant != DroopVariant::GradientConsistent,
    }
}

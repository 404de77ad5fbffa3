//! Scenario files: experiment definitions kept apart from the grid file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dcgrad_core::sim::{Protection, SwitchChange, TerminalOverride, V0Change};
use dcgrad_core::{GridModel, Scenario};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub t_end: f64,
    /// Initial states; the equilibrium is used when empty.
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(default)]
    pub v0_schedule: Vec<V0Change>,
    #[serde(default)]
    pub island_schedule: Vec<SwitchChange>,
    #[serde(default)]
    pub terminal_overrides: Vec<OverrideSpec>,
    #[serde(default)]
    pub protection: Option<ProtectionSpec>,
    /// Master-voltage sag run with and without protection from the equilibrium.
    #[serde(default)]
    pub sag: Option<SagSpec>,
}

/// Set-point change addressed by node id.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideSpec {
    pub t: f64,
    pub node: usize,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub k: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectionSpec {
    #[serde(default = "default_reconnect")]
    pub reconnect_v: f64,
    #[serde(default = "default_lockout")]
    pub lockout: f64,
}

fn default_reconnect() -> f64 {
    Protection::default().reconnect_v
}

fn default_lockout() -> f64 {
    Protection::default().lockout
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SagSpec {
    pub v0_pu: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing scenario {}", path.display()))
    }

    /// Builds the core scenario for one start. Protection thresholds are
    /// filled in by the caller.
    pub fn to_scenario(&self, model: &GridModel, start: Vec<f64>) -> Result<Scenario> {
        let mut sc = Scenario::new(start, self.t_end);
        sc.v0_schedule = self.v0_schedule.clone();
        sc.island_schedule = self.island_schedule.clone();
        for (i, o) in self.terminal_overrides.iter().enumerate() {
            let Some(terminal) = model.terminal_index(o.node) else {
                bail!("terminal_overrides[{i}]: node {} is not a terminal", o.node);
            };
            sc.terminal_overrides.push(TerminalOverride { t: o.t, terminal, p: o.p, k: o.k });
        }
        Ok(sc)
    }

    pub fn protection(&self, v_min: Vec<f64>) -> Protection {
        let spec = self.protection.unwrap_or(ProtectionSpec {
            reconnect_v: default_reconnect(),
            lockout: default_lockout(),
        });
        Protection { enabled: true, v_min, reconnect_v: spec.reconnect_v, lockout: spec.lockout }
    }
}

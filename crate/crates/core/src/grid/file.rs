//! JSON grid description.
//!
//! ```json
//! {
//!   "base": {"v_volts": 380, "s_watts": 1000},
//!   "master": {"id": 0, "v0_pu": 1.0},
//!   "lines": [{"from": 0, "to": 1, "r_ohm": 0.15},
//!             {"from": 1, "to": 2, "length_m": 120, "r_per_m": 0.0015},
//!             {"from": 2, "to": 3, "r_pu": 0.01}],
//!   "terminals": [{"node": 1, "p_pu": -0.08, "k_pu": 0.01, "c_pu": 1e-4}],
//!   "shunts": [{"node": 2, "g_pu": 0.5}],
//!   "island": false
//! }
//! ```
//!
//! Unknown keys are rejected. `shunts` and `island` are optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{assemble_model, build_full_conductance, GridModel, Line, PerUnitBase, Resistance, Shunt, TerminalParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSpec {
    pub v_volts: f64,
    pub s_watts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSpec {
    pub id: usize,
    pub v0_pu: f64,
}

/// One of `r_ohm`, `r_pu` or the pair `length_m` + `r_per_m` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub from: usize,
    pub to: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_per_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminalSpec {
    pub node: usize,
    pub p_pu: f64,
    pub k_pu: f64,
    pub c_pu: f64,
}

/// Linear load to ground; exactly one of `g_pu` or `r_ohm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntSpec {
    pub node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_pu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ohm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub base: BaseSpec,
    pub master: MasterSpec,
    pub lines: Vec<LineSpec>,
    pub terminals: Vec<TerminalSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shunts: Vec<ShuntSpec>,
    #[serde(default)]
    pub island: bool,
}

impl GridFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn per_unit_base(&self) -> Result<PerUnitBase> {
        PerUnitBase::new(self.base.v_volts, self.base.s_watts)
            .map_err(|e| Error::Validation(format!("base: {}", strip(e))))
    }

    pub fn lines(&self) -> Result<Vec<Line>> {
        self.lines
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let resistance = match (spec.r_ohm, spec.r_pu, spec.length_m, spec.r_per_m) {
                    (Some(r), None, None, None) => Resistance::Ohms(r),
                    (None, Some(r), None, None) => Resistance::PerUnit(r),
                    (None, None, Some(length_m), Some(r_per_m)) => Resistance::Length { length_m, r_per_m },
                    _ => {
                        return Err(Error::Validation(format!(
                            "lines[{i}]: give exactly one of r_ohm, r_pu, or length_m with r_per_m"
                        )))
                    }
                };
                if let Resistance::Length { length_m, .. } = resistance {
                    if !(length_m.is_finite() && length_m > 0.0) {
                        return Err(Error::Validation(format!("lines[{i}].length_m must be positive")));
                    }
                }
                Ok(Line::new(spec.from, spec.to, resistance))
            })
            .collect()
    }

    pub fn shunts(&self, base: &PerUnitBase) -> Result<Vec<Shunt>> {
        self.shunts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let g_pu = match (s.g_pu, s.r_ohm) {
                    (Some(g), None) => g,
                    (None, Some(r)) if r.is_finite() && r > 0.0 => 1.0 / base.resistance_to_pu(r),
                    (None, Some(r)) => {
                        return Err(Error::Validation(format!("shunts[{i}].r_ohm must be positive, got {r}")))
                    }
                    _ => return Err(Error::Validation(format!("shunts[{i}]: give exactly one of g_pu or r_ohm"))),
                };
                Ok(Shunt { node: s.node, g_pu })
            })
            .collect()
    }

    pub fn terminal_params(&self) -> Vec<TerminalParams> {
        self.terminals
            .iter()
            .map(|t| TerminalParams::new(t.node, t.p_pu, t.k_pu, t.c_pu))
            .collect()
    }

    /// Runs the full ingestion pipeline: per-unit conversion, nodal matrix,
    /// shunt folding, Kron reduction and model assembly.
    pub fn to_model(&self) -> Result<GridModel> {
        let base = self.per_unit_base()?;
        let lines = self.lines()?;
        let mut full = build_full_conductance(&lines, &base)?;
        full.add_shunts(&self.shunts(&base)?)?;
        for (i, t) in self.terminals.iter().enumerate() {
            TerminalParams::new(t.node, t.p_pu, t.k_pu, t.c_pu)
                .validate()
                .map_err(|e| Error::Validation(format!("terminals[{i}]: {}", strip(e))))?;
        }
        assemble_model(&full, self.master.id, self.terminal_params(), self.master.v0_pu, self.island)
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Validation(msg) => msg,
        other => other.to_string(),
    }
}

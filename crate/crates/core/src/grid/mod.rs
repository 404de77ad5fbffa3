//! Network ingestion, nodal conductance matrices, Kron reduction and the
//! per-unit grid model consumed by the analysis modules.
//!
//! Sign convention: the master coupling vector `g0` holds the off-diagonal
//! entries of the nodal matrix in the master column, i.e. the negated branch
//! conductances to the master node. With that choice the nodal dynamics have a
//! flat equilibrium `v = v0·1` when every terminal has `p = k = 0` and no shunt
//! loads are present.

mod file;

pub use file::{BaseSpec, GridFile, LineSpec, MasterSpec, ShuntSpec, TerminalSpec};

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Base quantities for per-unit conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    v_base: f64,
    s_base: f64,
}

impl PerUnitBase {
    pub fn new(v_base: f64, s_base: f64) -> Result<Self> {
        if !(v_base.is_finite() && v_base > 0.0) {
            return Err(Error::Validation(format!("base voltage must be positive, got {v_base}")));
        }
        if !(s_base.is_finite() && s_base > 0.0) {
            return Err(Error::Validation(format!("base power must be positive, got {s_base}")));
        }
        Ok(Self { v_base, s_base })
    }

    /// Identity base, handy when every quantity is already per unit.
    pub fn unit() -> Self {
        Self { v_base: 1.0, s_base: 1.0 }
    }

    pub fn v_base(&self) -> f64 {
        self.v_base
    }

    pub fn s_base(&self) -> f64 {
        self.s_base
    }

    /// `v_base² / s_base`, in ohms.
    pub fn r_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn resistance_to_pu(&self, ohms: f64) -> f64 {
        ohms / self.r_base()
    }

    /// Converts a capacitance in farads into the per-unit time constant
    /// `C·v_base²/s_base` (seconds) that scales the nodal dynamics.
    pub fn capacitance_to_pu(&self, farads: f64) -> f64 {
        farads * self.v_base * self.v_base / self.s_base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Resistance {
    Ohms(f64),
    PerUnit(f64),
    /// Length in metres times resistance per metre (ohm/m).
    Length { length_m: f64, r_per_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub resistance: Resistance,
}

impl Line {
    pub fn new(from: usize, to: usize, resistance: Resistance) -> Self {
        Self { from, to, resistance }
    }

    pub fn per_unit(from: usize, to: usize, r_pu: f64) -> Self {
        Self::new(from, to, Resistance::PerUnit(r_pu))
    }

    pub fn resistance_pu(&self, base: &PerUnitBase) -> f64 {
        match self.resistance {
            Resistance::Ohms(r) => base.resistance_to_pu(r),
            Resistance::PerUnit(r) => r,
            Resistance::Length { length_m, r_per_m } => base.resistance_to_pu(length_m * r_per_m),
        }
    }
}

/// Constant-conductance (linear) load between a node and ground, per unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shunt {
    pub node: usize,
    pub g_pu: f64,
}

/// Constant-power terminal with droop control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalParams {
    pub node: usize,
    /// Signed power, positive for generation.
    pub p: f64,
    /// Droop gain.
    pub k: f64,
    /// Capacitance as a per-unit time constant.
    pub c: f64,
}

impl TerminalParams {
    pub fn new(node: usize, p: f64, k: f64, c: f64) -> Self {
        Self { node, p, k, c }
    }

    fn validate(&self) -> Result<()> {
        if !self.p.is_finite() {
            return Err(Error::Validation(format!("terminal {}: p must be finite", self.node)));
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::Validation(format!(
                "terminal {}: droop gain k must be >= 0, got {}",
                self.node, self.k
            )));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::Validation(format!(
                "terminal {}: capacitance c must be > 0, got {}",
                self.node, self.c
            )));
        }
        Ok(())
    }
}

/// Nodal conductance matrix over an ordered set of node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalMatrix {
    pub node_ids: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl NodalMatrix {
    pub fn index_of(&self, node: usize) -> Option<usize> {
        self.node_ids.binary_search(&node).ok()
    }

    /// Adds linear loads to the diagonal.
    pub fn add_shunts(&mut self, shunts: &[Shunt]) -> Result<()> {
        for s in shunts {
            if !(s.g_pu.is_finite() && s.g_pu >= 0.0) {
                return Err(Error::Validation(format!(
                    "shunt at node {}: conductance must be >= 0, got {}",
                    s.node, s.g_pu
                )));
            }
            let i = self
                .index_of(s.node)
                .ok_or_else(|| Error::Validation(format!("shunt references unknown node {}", s.node)))?;
            self.matrix[(i, i)] += s.g_pu;
        }
        Ok(())
    }
}

/// Builds the full nodal conductance matrix (per unit) of a resistive network.
///
/// Rows and columns follow the sorted node ids appearing in `lines`. Parallel
/// lines add up.
pub fn build_full_conductance(lines: &[Line], base: &PerUnitBase) -> Result<NodalMatrix> {
    if lines.is_empty() {
        return Err(Error::Validation("network has no lines".into()));
    }
    let mut ids = BTreeSet::new();
    for line in lines {
        if line.from == line.to {
            return Err(Error::Validation(format!("line {}-{} is a self loop", line.from, line.to)));
        }
        let r = line.resistance_pu(base);
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::NonPositiveResistance { from: line.from, to: line.to, resistance: r });
        }
        ids.insert(line.from);
        ids.insert(line.to);
    }
    let node_ids: Vec<usize> = ids.into_iter().collect();
    let index: BTreeMap<usize, usize> = node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    check_connected(&node_ids, lines)?;

    let m = node_ids.len();
    let mut y = DMatrix::zeros(m, m);
    for line in lines {
        let g = 1.0 / line.resistance_pu(base);
        let (a, b) = (index[&line.from], index[&line.to]);
        y[(a, a)] += g;
        y[(b, b)] += g;
        y[(a, b)] -= g;
        y[(b, a)] -= g;
    }
    Ok(NodalMatrix { node_ids, matrix: y })
}

fn check_connected(node_ids: &[usize], lines: &[Line]) -> Result<()> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for line in lines {
        adj.entry(line.from).or_default().push(line.to);
        adj.entry(line.to).or_default().push(line.from);
    }
    let root = node_ids[0];
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &w in &adj[&u] {
            if seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    if seen.len() == node_ids.len() {
        return Ok(());
    }
    let component = node_ids.iter().copied().filter(|id| !seen.contains(id)).collect();
    Err(Error::Disconnected { root, component })
}

/// Kron reduction: Schur complement `Y_kk − Y_ke Y_ee⁻¹ Y_ek` keeping the
/// rows/columns listed in `keep` (in that order).
pub fn kron_reduce(y: &DMatrix<f64>, keep: &[usize]) -> Result<DMatrix<f64>> {
    let m = y.nrows();
    if y.ncols() != m {
        return Err(Error::Dimension { expected: m, got: y.ncols() });
    }
    let mut kept = BTreeSet::new();
    for &k in keep {
        if k >= m || !kept.insert(k) {
            return Err(Error::Validation(format!("invalid or repeated keep index {k}")));
        }
    }
    let elim: Vec<usize> = (0..m).filter(|i| !kept.contains(i)).collect();
    let y_kk = y.select_rows(keep).select_columns(keep);
    if elim.is_empty() {
        return Ok(y_kk);
    }
    let y_ee = y.select_rows(&elim).select_columns(&elim);
    let y_ek = y.select_rows(&elim).select_columns(keep);
    let y_ke = y.select_rows(keep).select_columns(&elim);

    let scale = linalg::gershgorin_bound(&y_ee).max(f64::MIN_POSITIVE);
    let singular = || Error::SingularEliminatedBlock { nodes: elim.clone() };
    if linalg::lambda_min(&y_ee) <= 1e-12 * scale {
        return Err(singular());
    }
    let chol = y_ee.cholesky().ok_or_else(singular)?;
    let reduced = y_kk - y_ke * chol.solve(&y_ek);
    // Symmetrize to remove round-off asymmetry.
    Ok((&reduced + reduced.transpose()) * 0.5)
}

/// Per-unit grid model: reduced conductance matrix over the terminals, master
/// coupling, master voltage and terminal parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    g: DMatrix<f64>,
    /// Master coupling with the switch closed; `g0()` masks it in island mode.
    g0_grid: DVector<f64>,
    v0: f64,
    terminals: Vec<TerminalParams>,
    island: bool,
}

impl GridModel {
    /// Builds a model directly from a reduced conductance matrix.
    pub fn new(
        g: DMatrix<f64>,
        g0: DVector<f64>,
        v0: f64,
        terminals: Vec<TerminalParams>,
        island: bool,
    ) -> Result<Self> {
        let n = terminals.len();
        if n == 0 {
            return Err(Error::Validation("model has no terminals".into()));
        }
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::Dimension { expected: n, got: g.nrows() });
        }
        if g0.len() != n {
            return Err(Error::Dimension { expected: n, got: g0.len() });
        }
        if !(v0.is_finite() && v0 >= 0.0) {
            return Err(Error::Validation(format!("master voltage must be >= 0, got {v0}")));
        }
        if g.iter().chain(g0.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Validation("conductances must be finite".into()));
        }
        let mut nodes = BTreeSet::new();
        for t in &terminals {
            t.validate()?;
            if !nodes.insert(t.node) {
                return Err(Error::Validation(format!("terminal node {} listed twice", t.node)));
            }
        }
        let scale = linalg::gershgorin_bound(&g).max(1.0);
        if linalg::max_asymmetry(&g) > 1e-12 * scale {
            return Err(Error::Validation("conductance matrix is not symmetric".into()));
        }
        let lambda_min = linalg::lambda_min(&g);
        if !(lambda_min > 0.0) {
            return Err(Error::NotPositiveDefinite { lambda_min });
        }
        Ok(Self { g, g0_grid: g0, v0, terminals, island })
    }

    pub fn n(&self) -> usize {
        self.terminals.len()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Effective master coupling: zero in island mode.
    pub fn g0(&self) -> DVector<f64> {
        if self.island {
            DVector::zeros(self.n())
        } else {
            self.g0_grid.clone()
        }
    }

    /// Master coupling with the switch closed, regardless of the island flag.
    pub fn g0_grid(&self) -> &DVector<f64> {
        &self.g0_grid
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn island(&self) -> bool {
        self.island
    }

    pub fn terminals(&self) -> &[TerminalParams] {
        &self.terminals
    }

    pub fn terminal_index(&self, node: usize) -> Option<usize> {
        self.terminals.iter().position(|t| t.node == node)
    }

    pub fn p(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.terminals.iter().map(|t| t.p))
    }

    pub fn k(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.terminals.iter().map(|t| t.k))
    }

    pub fn c(&self) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.terminals.iter().map(|t| t.c))
    }

    pub fn with_v0(&self, v0: f64) -> Self {
        Self { v0, ..self.clone() }
    }

    pub fn with_island(&self, island: bool) -> Self {
        Self { island, ..self.clone() }
    }

    /// Replaces power and droop gain of terminal `index`.
    pub fn with_terminal_pk(&self, index: usize, p: f64, k: f64) -> Self {
        let mut out = self.clone();
        out.terminals[index].p = p;
        out.terminals[index].k = k;
        out
    }

    /// Multiplies `p`, `k`, `G` and `g0` by a common positive factor.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.g *= factor;
        out.g0_grid *= factor;
        for t in &mut out.terminals {
            t.p *= factor;
            t.k *= factor;
        }
        out
    }
}

/// Assembles a [`GridModel`] from a full nodal matrix.
///
/// Every node other than the master and the terminals is eliminated by Kron
/// reduction. Terminal rows follow the order of `terminals`.
pub fn assemble_model(
    full: &NodalMatrix,
    master: usize,
    terminals: Vec<TerminalParams>,
    v0: f64,
    island: bool,
) -> Result<GridModel> {
    let master_idx = full
        .index_of(master)
        .ok_or_else(|| Error::Validation(format!("master node {master} does not appear in any line")))?;
    let mut keep = vec![master_idx];
    for t in &terminals {
        if t.node == master {
            return Err(Error::Validation(format!("terminal placed on master node {master}")));
        }
        let idx = full
            .index_of(t.node)
            .ok_or_else(|| Error::Validation(format!("terminal node {} does not appear in any line", t.node)))?;
        if keep.contains(&idx) {
            return Err(Error::Validation(format!("terminal node {} listed twice", t.node)));
        }
        keep.push(idx);
    }
    let reduced = kron_reduce(&full.matrix, &keep).map_err(|e| match e {
        Error::SingularEliminatedBlock { nodes } => Error::SingularEliminatedBlock {
            nodes: nodes.into_iter().map(|i| full.node_ids[i]).collect(),
        },
        other => other,
    })?;
    let n = terminals.len();
    let g = reduced.view((1, 1), (n, n)).into_owned();
    let g0 = reduced.view((1, 0), (n, 1)).column(0).into_owned();
    GridModel::new(g, g0, v0, terminals, island)
}

use thiserror::Error;

use crate::equilibrium::IterationRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("line {from}-{to}: resistance must be positive and finite, got {resistance}")]
    NonPositiveResistance { from: usize, to: usize, resistance: f64 },

    #[error("network is disconnected: nodes {component:?} are not reachable from node {root}")]
    Disconnected { root: usize, component: Vec<usize> },

    #[error("eliminated block is singular (floating subnetwork among nodes {nodes:?})")]
    SingularEliminatedBlock { nodes: Vec<usize> },

    #[error("conductance matrix is not positive definite (smallest eigenvalue {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },

    #[error("voltage at index {index} must be strictly positive, got {value}")]
    Domain { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("solver did not converge in {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<IterationRecord>,
    },

    #[error("no descent step found at iteration {iteration}; W may have no minimum in the positive orthant")]
    NoDescent {
        iteration: usize,
        trace: Vec<IterationRecord>,
    },

    #[error("equilibrium not certified at level mu={mu:e} (smallest eigenvalue {lambda_min:e})")]
    NotCertified { mu: f64, lambda_min: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

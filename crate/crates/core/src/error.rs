use thiserror::Error;

use crate::mdp::Violation;
use crate::search::SearchReport;

pub type Result<T, E = NdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NdpError {
    #[error("invalid MDP: {}", join_violations(.0))]
    InvalidMdp(Vec<Violation>),

    #[error("invalid tolerance {0} (must be positive and finite)")]
    InvalidTolerance(f64),

    #[error("invalid epsilon {epsilon} for {mode} mode")]
    InvalidEpsilon { mode: &'static str, epsilon: f64 },

    #[error("multiplicative epsilon mode requires nonnegative rewards; R({state}, {action}) = {reward}")]
    NegativeReward { state: usize, action: usize, reward: f64 },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("action {action} is not available in state {state}")]
    InvalidAction { state: usize, action: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("MDP transition graph is not acyclic; cycle through states {cycle:?}")]
    NotDag { cycle: Vec<usize> },

    #[error("instance too large for exhaustive enumeration: {pairs} state-action pairs (limit {limit})")]
    TooLarge { pairs: usize, limit: usize },

    #[error("search budget exhausted after {} probes; best-so-far has size {}", .0.nodes_expanded, .0.policy.size())]
    BudgetExhausted(Box<SearchReport>),

    #[error("{0}")]
    Format(String),
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

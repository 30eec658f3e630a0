//! JSON artifacts: MDP files, policy files, reports.
//!
//! Every writer emits pretty-printed JSON followed by a newline. Floats use
//! the shortest representation that parses back to the same `f64`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{NdpError, Result};
use crate::exact::ExactResult;
use crate::mdp::{Mdp, OptimalSolution, RawMdp};
use crate::policy::{margin, EpsKind, EpsMode, NondetPolicy, WorstCaseEval};
use crate::search::{Objective, PairOrdering, SearchMode, SearchReport};

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| NdpError::Format(e.to_string()))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| NdpError::Format(format!("{}: {e}", path.display())))
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| NdpError::Format(format!("{}: {e}", path.display())))
}

/// Parses and validates an MDP document.
pub fn parse_mdp(text: &str) -> Result<Mdp> {
    Mdp::try_from(from_json::<RawMdp>(text)?)
}

pub fn read_mdp(path: &Path) -> Result<Mdp> {
    parse_mdp(&read_file(path)?)
}

pub fn mdp_to_json(mdp: &Mdp) -> String {
    to_json(&mdp.to_raw())
}

pub fn write_mdp(path: &Path, mdp: &Mdp) -> Result<()> {
    write_file(path, &mdp_to_json(mdp))
}

/// A non-deterministic policy with the epsilon it was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub mdp_name: String,
    pub mode: EpsKind,
    pub epsilon: f64,
    pub sets: Vec<Vec<usize>>,
    pub worst_case_v: Vec<f64>,
    pub size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proven_optimal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<u64>,
}

impl PolicyFile {
    pub fn new(mdp: &Mdp, mode: EpsMode, pi: &NondetPolicy, eval: &WorstCaseEval) -> Self {
        PolicyFile {
            mdp_name: mdp.name().to_string(),
            mode: mode.kind,
            epsilon: mode.epsilon,
            sets: pi.sets().to_vec(),
            worst_case_v: eval.v.as_slice().to_vec(),
            size: pi.size(),
            proven_optimal: None,
            nodes: None,
        }
    }

    pub fn from_exact(mdp: &Mdp, mode: EpsMode, result: &ExactResult) -> Self {
        PolicyFile {
            mdp_name: mdp.name().to_string(),
            mode: mode.kind,
            epsilon: mode.epsilon,
            sets: result.policy.sets().to_vec(),
            worst_case_v: result.v.as_slice().to_vec(),
            size: result.policy.size(),
            proven_optimal: Some(result.proven_optimal),
            nodes: Some(result.nodes),
        }
    }

    pub fn eps_mode(&self) -> Result<EpsMode> {
        EpsMode::new(self.mode, self.epsilon)
    }

    /// The policy, checked against `mdp`.
    pub fn policy(&self, mdp: &Mdp) -> Result<NondetPolicy> {
        if self.mdp_name != mdp.name() {
            return Err(NdpError::ShapeMismatch(format!(
                "policy was computed for MDP {:?}, not {:?}",
                self.mdp_name,
                mdp.name()
            )));
        }
        let pi = NondetPolicy::new(mdp, self.sets.clone())?;
        if pi.size() != self.size {
            return Err(NdpError::InvalidPolicy(format!("size field {} but sets hold {}", self.size, pi.size())));
        }
        Ok(pi)
    }
}

pub fn read_policy(path: &Path) -> Result<PolicyFile> {
    from_json(&read_file(path)?)
}

/// V*, Q* and the greedy policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveFile {
    pub mdp_name: String,
    pub gamma: f64,
    pub v_star: Vec<f64>,
    pub q_star: Vec<Vec<f64>>,
    pub policy: Vec<usize>,
    pub policy_labels: Vec<String>,
}

impl SolveFile {
    pub fn new(mdp: &Mdp, sol: &OptimalSolution) -> Self {
        SolveFile {
            mdp_name: mdp.name().to_string(),
            gamma: mdp.gamma(),
            v_star: sol.value.as_slice().to_vec(),
            q_star: sol.q.rows().to_vec(),
            policy: sol.policy.actions().to_vec(),
            policy_labels: sol
                .policy
                .actions()
                .iter()
                .enumerate()
                .map(|(s, &a)| mdp.action_label(s, a).to_string())
                .collect(),
        }
    }
}

/// Worst-case values of a policy file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub mdp_name: String,
    pub sets: Vec<Vec<usize>>,
    pub size: usize,
    pub worst_case_v: Vec<f64>,
    /// Worst-case Q for every pair, allowed or not.
    pub worst_case_q: Vec<Vec<f64>>,
    pub eps_optimal: bool,
    pub mode: EpsKind,
    pub epsilon: f64,
}

/// Search statistics written next to the policy file. Wall time is left
/// out so the file is byte-stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub mdp_name: String,
    pub mode: EpsKind,
    pub epsilon: f64,
    pub search_mode: SearchMode,
    pub objective: Objective,
    pub ordering: PairOrdering,
    pub objective_value: f64,
    pub size: usize,
    pub conservative_size: usize,
    pub depth: usize,
    pub nodes_expanded: u64,
    pub evaluations: u64,
    pub feasible_nodes: u64,
    pub complete: bool,
    pub margin: Option<f64>,
    pub worst_case_v: Vec<f64>,
}

impl ReportFile {
    pub fn new(
        mdp: &Mdp,
        mode: EpsMode,
        settings: (SearchMode, Objective, PairOrdering),
        report: &SearchReport,
        complete: bool,
        q_star: &crate::mdp::QFunction,
    ) -> Result<Self> {
        Ok(ReportFile {
            mdp_name: mdp.name().to_string(),
            mode: mode.kind,
            epsilon: mode.epsilon,
            search_mode: settings.0,
            objective: settings.1,
            ordering: settings.2,
            objective_value: report.objective_value,
            size: report.policy.size(),
            conservative_size: report.conservative_size,
            depth: report.depth(),
            nodes_expanded: report.nodes_expanded,
            evaluations: report.evaluations,
            feasible_nodes: report.feasible_nodes,
            complete,
            margin: margin(mdp, &report.policy, q_star)?,
            worst_case_v: report.eval.v.as_slice().to_vec(),
        })
    }
}

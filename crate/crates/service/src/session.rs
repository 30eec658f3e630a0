//! Interactive episodes over a cached non-deterministic policy.

use std::sync::Arc;

use ndp_core::policy::slack;
use ndp_core::{EpsMode, Mdp, NondetPolicy, QFunction, ValueFunction, WorstCaseEval, DEFAULT_TOL};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Conservative,
    SearchFull,
    SearchDag,
    Exact,
}

/// A policy computed once per (MDP, epsilon, algorithm) and shared by
/// sessions.
#[derive(Debug)]
pub struct CachedPolicy {
    pub eps: EpsMode,
    pub algorithm: Algorithm,
    pub policy: NondetPolicy,
    pub eval: WorstCaseEval,
    pub vstar: ValueFunction,
    pub qstar: QFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggestedAction {
    pub action: usize,
    pub label: String,
    pub worst_case_q: f64,
    pub is_optimal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestions {
    pub session_id: u64,
    pub state: usize,
    pub state_label: String,
    pub step: usize,
    pub horizon: usize,
    pub actions: Vec<SuggestedAction>,
    pub v_star: f64,
    pub worst_case_v: f64,
    pub epsilon: f64,
    pub mode: ndp_core::EpsKind,
    pub return_so_far: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: usize,
    pub state: usize,
    pub suggested: Vec<usize>,
    pub action: usize,
    #[serde(rename = "override")]
    pub overridden: bool,
    /// Expected reward of the chosen pair.
    pub reward: f64,
    /// `None` when the episode terminated on this step.
    pub next_state: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: Option<usize>,
    pub done: bool,
    pub return_so_far: f64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: u64,
    pub mdp_id: u64,
    pub seed: u64,
    pub start_state: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub mode: ndp_core::EpsKind,
    pub algorithm: Algorithm,
    pub entries: Vec<TranscriptEntry>,
    pub return_so_far: f64,
    pub done: bool,
}

pub struct Session {
    pub id: u64,
    pub mdp_id: u64,
    mdp: Arc<Mdp>,
    cached: Arc<CachedPolicy>,
    seed: u64,
    start_state: usize,
    state: usize,
    step: usize,
    horizon: usize,
    return_so_far: f64,
    terminated: bool,
    rng: ChaCha8Rng,
    transcript: Vec<TranscriptEntry>,
}

impl Session {
    pub fn new(
        id: u64,
        mdp_id: u64,
        mdp: Arc<Mdp>,
        cached: Arc<CachedPolicy>,
        start_state: usize,
        horizon: usize,
        seed: u64,
    ) -> Self {
        Session {
            id,
            mdp_id,
            mdp,
            cached,
            seed,
            start_state,
            state: start_state,
            step: 0,
            horizon,
            return_so_far: 0.0,
            terminated: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
            transcript: Vec::new(),
        }
    }

    pub fn policy(&self) -> &NondetPolicy {
        &self.cached.policy
    }

    pub fn done(&self) -> bool {
        self.terminated || self.step >= self.horizon
    }

    fn ensure_active(&self) -> Result<(), ApiError> {
        if self.done() {
            return Err(ApiError::episode_complete(self.step, self.horizon));
        }
        Ok(())
    }

    pub fn suggestions(&self) -> Result<Suggestions, ApiError> {
        self.ensure_active()?;
        let s = self.state;
        let c = &self.cached;
        let best = c.qstar.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let actions = c
            .policy
            .set(s)
            .iter()
            .map(|&a| SuggestedAction {
                action: a,
                label: self.mdp.action_label(s, a).to_string(),
                worst_case_q: c.eval.q.get(s, a),
                is_optimal: c.qstar.get(s, a) >= best - slack(DEFAULT_TOL),
            })
            .collect();
        Ok(Suggestions {
            session_id: self.id,
            state: s,
            state_label: self.mdp.state_label(s).to_string(),
            step: self.step,
            horizon: self.horizon,
            actions,
            v_star: c.vstar[s],
            worst_case_v: c.eval.v[s],
            epsilon: c.eps.epsilon,
            mode: c.eps.kind,
            return_so_far: self.return_so_far,
        })
    }

    pub fn step(&mut self, action: usize, allow_override: bool) -> Result<StepOutcome, ApiError> {
        self.ensure_active()?;
        let s = self.state;
        if action >= self.mdp.n_actions(s) {
            return Err(ApiError::invalid_action(s, action, self.mdp.n_actions(s)));
        }
        let suggested = self.cached.policy.set(s).to_vec();
        let overridden = !suggested.contains(&action);
        if overridden && !allow_override {
            return Err(ApiError::not_suggested(action, &suggested));
        }
        let reward = self.mdp.reward(s, action);
        let next_state = sample(&mut self.rng, self.mdp.transitions(s, action));
        self.return_so_far += discount(self.mdp.gamma(), self.step) * reward;
        self.transcript.push(TranscriptEntry {
            step: self.step,
            state: s,
            suggested,
            action,
            overridden,
            reward,
            next_state,
        });
        self.step += 1;
        match next_state {
            Some(next) => self.state = next,
            None => self.terminated = true,
        }
        Ok(StepOutcome {
            reward,
            next_state,
            done: self.done(),
            return_so_far: self.return_so_far,
            step: self.step,
        })
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            session_id: self.id,
            mdp_id: self.mdp_id,
            seed: self.seed,
            start_state: self.start_state,
            horizon: self.horizon,
            epsilon: self.cached.eps.epsilon,
            mode: self.cached.eps.kind,
            algorithm: self.cached.algorithm,
            entries: self.transcript.clone(),
            return_so_far: self.return_so_far,
            done: self.done(),
        }
    }
}

/// `gamma^step`.
pub fn discount(gamma: f64, step: usize) -> f64 {
    gamma.powi(i32::try_from(step).unwrap_or(i32::MAX))
}

/// Draws a successor; an empty row ends the episode.
fn sample(rng: &mut ChaCha8Rng, row: &[(usize, f64)]) -> Option<usize> {
    let last = row.iter().rev().find(|&&(_, p)| p > 0.0)?.0;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(next, p) in row {
        acc += p;
        if u < acc {
            return Some(next);
        }
    }
    Some(last)
}

impl Transcript {
    /// Discounted return recomputed from the entries alone.
    pub fn recomputed_return(&self, gamma: f64) -> f64 {
        self.entries.iter().fold(0.0, |acc, e| acc + discount(gamma, e.step) * e.reward)
    }
}

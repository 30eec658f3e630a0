//! Finite MDPs, worst-case evaluation of non-deterministic policies, and
//! searches for large epsilon-optimal action sets.

pub mod bench;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod gen;
pub mod io;
pub mod mdp;
pub mod policy;
pub mod search;

pub use error::{NdpError, Result};
pub use exact::{solve_exact, solve_exact_with, verify_nonaugmentable, ExactConfig, ExactResult, MipModel};
pub use mdp::{
    evaluate_deterministic, is_dag, solve_optimal, DeterministicPolicy, Mdp, OptimalSolution, QFunction, RawMdp,
    ValueFunction, DEFAULT_TOL,
};
pub use policy::{
    conservative_policy, evaluate_worst_case, is_eps_optimal, is_non_augmentable, margin, EpsKind, EpsMode,
    NondetPolicy, WorstCaseEval,
};
pub use search::{
    enumerate_nonaugmentable, search, search_dag, search_full, Objective, PairOrdering, ProbeMode, SearchConfig,
    SearchMode, SearchReport,
};

//! Hierarchical policies for goal requests and their execution.

mod belief;
mod plan;
mod run;

use thiserror::Error;

use crate::hierarchy::HierarchyError;
use crate::pomdp::PomdpError;

pub use belief::{entropy_weight, map_belief_to_local, GlobalBelief};
pub use plan::{
    build_hierarchical_policy, build_local_policy, hierarchical_state, local_policy_seeds, HierarchicalPolicy,
    LocalPolicy,
};
pub use run::{
    execute_hierarchical_policy, Budgets, EnvironmentPort, ExecutionRecord, ExecutionReport, Executor, Flow,
    SimulatedEnv,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("coverage violation: {mass} of the belief at height {height} lies outside a local space without extra")]
    Coverage { height: usize, mass: f64 },
    #[error("local space has no extra state")]
    NoExtra,
    #[error("`{0}` is not a leaf of the state-space tree")]
    NotALeaf(String),
    #[error("goal node is not at height {0}")]
    GoalHeight(usize),
    #[error("environment failure: {0}")]
    Environment(String),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
}

#[cfg(test)]
mod tests;

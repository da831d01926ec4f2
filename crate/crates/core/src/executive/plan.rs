use serde::{Deserialize, Serialize};

use super::ExecError;
use crate::hierarchy::{build_local_model, Hierarchy, LocalKind, LocalModel, LocalSpec, Sst};
use crate::par::Execution;
use crate::pbvi::{self, SolverParams};
use crate::pomdp::{AlphaVectorPolicy, Belief};
use crate::seeds::derive_seed;

/// Path `[root, …, goal]` through the tree.
pub fn hierarchical_state(goal: usize, sst: &Sst) -> Result<Vec<usize>, ExecError> {
    match sst.nodes.get(goal) {
        Some(n) if n.height == sst.depth() => Ok(sst.path_to(goal)),
        Some(n) => Err(ExecError::NotALeaf(n.label.clone())),
        None => Err(ExecError::NotALeaf(goal.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalPolicy {
    pub height: usize,
    pub goal: usize,
    pub model: LocalModel,
    pub policy: AlphaVectorPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalPolicy {
    /// `[root, …, goal leaf]`.
    pub goal_path: Vec<usize>,
    /// `policies[k]` acts at height `k + 1`.
    pub policies: Vec<LocalPolicy>,
}

/// `δ` on every non-special state, the uniform belief over them, and `δ(extra)`.
pub fn local_policy_seeds(model: &LocalModel) -> Vec<Belief> {
    let n = model.pomdp.n_states();
    let k = model.nodes.len();
    let mut seeds: Vec<Belief> = (0..k).map(|i| Belief::delta(n, i)).collect();
    let mut uniform = vec![0.0; n];
    uniform[..k].fill(1.0 / k as f64);
    seeds.push(Belief::new(uniform).expect("uniform over the non-special states"));
    if let Some(e) = model.extra {
        seeds.push(Belief::delta(n, e));
    }
    seeds
}

/// Local policy steering to `goal_path[i]` among the children of `goal_path[i − 1]`.
pub fn build_local_policy(
    goal_path: &[usize],
    i: usize,
    hierarchy: &Hierarchy,
    solver: &SolverParams,
) -> Result<LocalPolicy, ExecError> {
    let sst = &hierarchy.sst;
    if i == 0 || i >= goal_path.len() {
        return Err(ExecError::GoalHeight(i));
    }
    let goal = goal_path[i];
    if sst.node(goal).height != i {
        return Err(ExecError::GoalHeight(i));
    }
    let spec = LocalSpec {
        kind: LocalKind::LocalPolicy,
        core: sst.children(goal_path[i - 1]).to_vec(),
        goals: [goal].into(),
        with_extra: i > 1,
        with_help: i > 1,
        reward: hierarchy.params.reward,
    };
    let model = build_local_model(hierarchy.level(i), hierarchy.neighbors.at(i), &spec)?;
    let key = i.to_string();
    let seed = derive_seed(solver.seed, &[b"lp", key.as_bytes(), sst.node(goal).label.as_bytes()]);
    let policy = pbvi::solve(&model.pomdp, &local_policy_seeds(&model), &solver.with_seed(seed))?;
    Ok(LocalPolicy { height: i, goal, model, policy })
}

/// One local policy per non-root node on the goal's path, top-down.
pub fn build_hierarchical_policy(
    goal: usize,
    hierarchy: &Hierarchy,
    solver: &SolverParams,
    execution: Execution,
) -> Result<HierarchicalPolicy, ExecError> {
    let goal_path = hierarchical_state(goal, &hierarchy.sst)?;
    let built = execution.map_range(goal_path.len() - 1, |k| build_local_policy(&goal_path, k + 1, hierarchy, solver));
    let policies = built.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(HierarchicalPolicy { goal_path, policies })
}

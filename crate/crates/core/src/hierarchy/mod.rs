//! The hierarchy of abstract actions built over the state-space tree.

pub mod estimate;
pub mod local;
pub mod sst;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{self, BottomPomdp, GroundingError};
use crate::kb::KnowledgeBase;
use crate::par::Execution;
use crate::pbvi::{self, SolverParams};
use crate::pomdp::{AlphaVectorPolicy, Belief, Pomdp, PomdpBuilder, PomdpError};
use crate::seeds::derive_seed;

pub use estimate::{estimate_outcome_row, OutcomeEstimate};
pub use local::{build_local_model, outer_neighbors, LocalKind, LocalModel, LocalSpec};
pub use sst::{build_sst, lift_neighbors, NeighborIndex, Sst, SstNode};

pub const DEFAULT_REWARD: f64 = 100.0;
pub const DEFAULT_SIMULATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierarchyError {
    #[error("the knowledge base declares no hierarchical function")]
    NoHierarchicalFunction,
    #[error("ragged hierarchy: {0}")]
    Ragged(String),
    #[error("degenerate abstract action: no lower action connects two of [{0}]")]
    DegenerateAction(String),
    #[error("coverage violation: `{0}` leaks out of a local space without an extra state")]
    Coverage(String),
    #[error("simulation count must be positive")]
    ZeroSimulations,
    #[error("no node `{0}` in the state-space tree")]
    UnknownNode(String),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    /// Reward magnitude `ℜ`.
    pub reward: f64,
    /// Simulations per abstract action.
    pub simulations: usize,
    /// Simulation cap as a multiple of the local state count.
    pub max_steps_factor: usize,
    pub solver: SolverParams,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        Self {
            reward: DEFAULT_REWARD,
            simulations: DEFAULT_SIMULATIONS,
            max_steps_factor: 20,
            solver: SolverParams::default(),
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractAction {
    pub source: usize,
    pub target: usize,
    pub height: usize,
    pub model: LocalModel,
    pub policy: AlphaVectorPolicy,
    pub outcome: OutcomeEstimate,
}

/// Dynamics over the SST nodes of one height. The bottom level wraps the
/// grounded POMDP; upper levels have one action per abstract action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub height: usize,
    /// Node ids in state order (ascending).
    pub nodes: Vec<usize>,
    pub pomdp: Pomdp,
    /// Empty on the bottom level.
    pub actions: Vec<AbstractAction>,
}

impl Level {
    pub fn position(&self, node: usize) -> Option<usize> {
        self.nodes.binary_search(&node).ok()
    }

    pub fn label(&self, node: usize) -> String {
        self.pomdp.states[self.position(node).expect("node on this level")].clone()
    }

    pub fn is_concrete(&self) -> bool {
        self.actions.is_empty()
    }

    /// Source node of abstract action `a`; `None` for concrete actions.
    pub fn abstract_source(&self, a: usize) -> Option<usize> {
        self.actions.get(a).map(|aa| aa.source)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub sst: Sst,
    pub neighbors: NeighborIndex,
    pub bottom: Level,
    /// Abstract levels from height `depth − 1` up to height 1.
    pub levels: Vec<Level>,
    pub params: HierarchyParams,
}

impl Hierarchy {
    pub fn depth(&self) -> usize {
        self.sst.depth()
    }

    /// Dynamics of the nodes at `height` (1 ..= depth).
    pub fn level(&self, height: usize) -> &Level {
        let d = self.depth();
        assert!((1..=d).contains(&height), "height {height} outside 1..={d}");
        if height == d {
            &self.bottom
        } else {
            &self.levels[d - 1 - height]
        }
    }

    pub fn abstract_actions(&self) -> impl Iterator<Item = &AbstractAction> {
        self.levels.iter().flat_map(|l| l.actions.iter())
    }

    /// Grounds, builds the tree and every abstract level.
    pub fn from_kb(kb: &KnowledgeBase, params: &HierarchyParams) -> Result<Self, HierarchyError> {
        let bp = grounding::build_bottom(kb)?;
        let sst = build_sst(kb, &bp)?;
        let neighbors = lift_neighbors(&sst, &grounding::neighbor_pairs_bottom(kb, &bp));
        build_hierarchy(&bp, sst, neighbors, params)
    }
}

/// Seed beliefs for an abstract action: `δ` on every non-special state and on `extra`.
pub fn abstract_action_seeds(model: &LocalModel) -> Vec<Belief> {
    let n = model.pomdp.n_states();
    let mut seeds: Vec<Belief> = (0..model.nodes.len()).map(|k| Belief::delta(n, k)).collect();
    if let Some(e) = model.extra {
        seeds.push(Belief::delta(n, e));
    }
    seeds
}

fn build_abstract_action(
    h: &HierarchyParams,
    sst: &Sst,
    neighbors: &NeighborIndex,
    lower: &Level,
    height: usize,
    source: usize,
    target: usize,
) -> Result<AbstractAction, HierarchyError> {
    let spec = LocalSpec {
        kind: LocalKind::AbstractAction,
        core: sst.children(source).to_vec(),
        goals: sst.children(target).iter().copied().collect(),
        with_extra: true,
        with_help: false,
        reward: h.reward,
    };
    let model = build_local_model(lower, neighbors.at(height + 1), &spec)?;
    let key = height.to_string();
    let seed = derive_seed(h.seed, &[key.as_bytes(), sst.node(source).label.as_bytes(), sst.node(target).label.as_bytes()]);
    let solver = SolverParams { seed, ..h.solver.clone() };
    let policy = pbvi::solve(&model.pomdp, &abstract_action_seeds(&model), &solver)?;

    let mut domain = vec![source];
    domain.extend(neighbors.neighbors_of(height, source));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let max_steps = h.max_steps_factor * model.pomdp.n_states();
    let outcome = estimate_outcome_row(&model, &policy, lower, sst, &domain, h.simulations, max_steps, &mut rng)?;
    if outcome.discarded > 0.0 {
        log::warn!(
            "{} -> {}: {:.3} of simulations ended outside the neighborhood",
            sst.node(source).label,
            sst.node(target).label,
            outcome.discarded
        );
    }
    Ok(AbstractAction { source, target, height, model, policy, outcome })
}

/// Reward-free POMDP over the nodes of `height`: each action moves its source
/// by its outcome row and leaves every other node in place.
pub fn level_pomdp(sst: &Sst, height: usize, actions: &[AbstractAction]) -> Result<Pomdp, PomdpError> {
    let nodes = sst.nodes_at(height);
    let labels: Vec<String> = nodes.iter().map(|&n| sst.node(n).label.clone()).collect();
    let action_labels = actions
        .iter()
        .map(|aa| format!("{}->{}", sst.node(aa.source).label, sst.node(aa.target).label))
        .collect();
    let mut b = PomdpBuilder::new(labels.clone(), action_labels, labels);
    for (a, aa) in actions.iter().enumerate() {
        for (k, &n) in nodes.iter().enumerate() {
            if n == aa.source {
                for &(t, p) in &aa.outcome.row {
                    if p > 0.0 {
                        b.add_transition(k, a, sst.node(t).level_index, p);
                    }
                }
            } else {
                b.add_transition(k, a, k, 1.0);
            }
            b.add_observation(k, a, k, 1.0);
        }
    }
    b.build()
}

/// The bottom POMDP as the level at the leaves' height.
pub fn bottom_level(bp: &BottomPomdp, sst: &Sst) -> Level {
    let depth = sst.depth();
    Level { height: depth, nodes: sst.nodes_at(depth).to_vec(), pomdp: bp.pomdp.clone(), actions: Vec::new() }
}

pub fn build_hierarchy(
    bp: &BottomPomdp,
    sst: Sst,
    neighbors: NeighborIndex,
    params: &HierarchyParams,
) -> Result<Hierarchy, HierarchyError> {
    if params.simulations == 0 {
        return Err(HierarchyError::ZeroSimulations);
    }
    let depth = sst.depth();
    let bottom = bottom_level(bp, &sst);
    let mut levels: Vec<Level> = Vec::new();
    for height in (1..depth).rev() {
        let lower = levels.last().unwrap_or(&bottom);
        let pairs: Vec<(usize, usize)> = neighbors.at(height).iter().copied().collect();
        let built: Vec<Result<AbstractAction, HierarchyError>> = params
            .execution
            .map(&pairs, |&(i, j)| build_abstract_action(params, &sst, &neighbors, lower, height, i, j));
        let actions = built.into_iter().collect::<Result<Vec<_>, _>>()?;
        let pomdp = level_pomdp(&sst, height, &actions)?;
        levels.push(Level { height, nodes: sst.nodes_at(height).to_vec(), pomdp, actions });
    }
    Ok(Hierarchy { sst, neighbors, bottom, levels, params: params.clone() })
}

/// Everything needed to plan and simulate without the original files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub general: String,
    pub specific: String,
    pub hierarchy: Hierarchy,
}

impl Bundle {
    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("bundles always serialize")
    }

    pub fn from_text(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests;

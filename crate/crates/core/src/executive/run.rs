use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::belief::{extra_ratio, map_belief_to_local, weighted_extra, GlobalBelief};
use super::plan::HierarchicalPolicy;
use super::ExecError;
use crate::hierarchy::{Hierarchy, LocalModel, Sst};
use crate::pomdp::{sample_step, AlphaVectorPolicy, Belief, Pomdp};

/// Boundary to whatever carries out concrete actions.
pub trait EnvironmentPort {
    /// Executes concrete action `action` and returns the observation index.
    fn execute(&mut self, action: usize) -> Result<usize, ExecError>;

    /// Ground truth, when the environment can reveal it.
    fn true_state(&self) -> Option<usize> {
        None
    }
}

/// Samples the bottom POMDP itself.
pub struct SimulatedEnv<'a> {
    pomdp: &'a Pomdp,
    state: usize,
    rng: ChaCha8Rng,
    pub steps: usize,
}

impl<'a> SimulatedEnv<'a> {
    pub fn new(pomdp: &'a Pomdp, start: usize, seed: u64) -> Self {
        Self { pomdp, state: start, rng: ChaCha8Rng::seed_from_u64(seed), steps: 0 }
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl EnvironmentPort for SimulatedEnv<'_> {
    fn execute(&mut self, action: usize) -> Result<usize, ExecError> {
        let (s2, o) = sample_step(self.pomdp, self.state, action, &mut self.rng)?;
        self.state = s2;
        self.steps += 1;
        Ok(o)
    }

    fn true_state(&self) -> Option<usize> {
        Some(self.state)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    /// Action choices per policy invocation, as a multiple of its state count.
    pub per_invocation_factor: usize,
    /// Concrete actions per run.
    pub global_actions: usize,
    /// Help transfers tolerated without a concrete action in between.
    pub oscillation_limit: usize,
}

impl Budgets {
    /// Defaults for a world of `cells` bottom states.
    pub fn for_cells(cells: usize) -> Self {
        Self { per_invocation_factor: 20, global_actions: 50 * cells, oscillation_limit: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Terminate,
    Help,
    /// The run was stopped by a global guard.
    Abort,
}

/// Runs local policies against an environment while tracking the global belief.
pub struct Executor<'a, E: EnvironmentPort> {
    sst: &'a Sst,
    bottom: &'a Pomdp,
    hierarchy: Option<&'a Hierarchy>,
    env: &'a mut E,
    pub gb: GlobalBelief,
    pub budgets: Budgets,
    pub concrete_actions: usize,
    pub truncations: usize,
    pub stalls: usize,
    /// `(action, observation)` per concrete step.
    pub trace: Vec<(usize, usize)>,
    pub abort: Option<String>,
    pub max_gb_violation: f64,
    pub max_recursion: usize,
    recursion: usize,
}

impl<'a, E: EnvironmentPort> Executor<'a, E> {
    /// `hierarchy` is needed only when some policy uses abstract actions.
    pub fn new(
        sst: &'a Sst,
        bottom: &'a Pomdp,
        hierarchy: Option<&'a Hierarchy>,
        env: &'a mut E,
        b0: &Belief,
        budgets: Budgets,
    ) -> Result<Self, ExecError> {
        Ok(Self {
            sst,
            bottom,
            hierarchy,
            env,
            gb: GlobalBelief::build(b0, sst)?,
            budgets,
            concrete_actions: 0,
            truncations: 0,
            stalls: 0,
            trace: Vec::new(),
            abort: None,
            max_gb_violation: 0.0,
            max_recursion: 0,
            recursion: 0,
        })
    }

    pub fn env(&self) -> &E {
        self.env
    }

    fn give_up(&mut self, model: &LocalModel) -> Flow {
        self.truncations += 1;
        if model.help.is_some() {
            Flow::Help
        } else {
            Flow::Terminate
        }
    }

    /// Runs `policy` (over `model`, whose states sit at `height`) until it picks
    /// `terminate` or `help`.
    pub fn execute_policy(&mut self, model: &LocalModel, policy: &AlphaVectorPolicy, height: usize) -> Result<Flow, ExecError> {
        self.recursion += 1;
        self.max_recursion = self.max_recursion.max(self.recursion);
        let flow = self.policy_loop(model, policy, height);
        self.recursion -= 1;
        flow
    }

    fn policy_loop(&mut self, model: &LocalModel, policy: &AlphaVectorPolicy, height: usize) -> Result<Flow, ExecError> {
        let budget = self.budgets.per_invocation_factor * model.pomdp.n_states();
        let depth = self.sst.depth();
        let mut chosen = 0;
        // Abstract actions that returned without acting, since the last concrete step.
        let mut masked: BTreeSet<usize> = BTreeSet::new();
        loop {
            if self.abort.is_some() {
                return Ok(Flow::Abort);
            }
            let b = map_belief_to_local(model, &self.gb, self.sst, height)?;
            let weighting = match model.extra {
                Some(e) => Some((e, extra_ratio(model, &self.gb, self.sst, height))),
                None => None,
            };
            let Some((a, value)) = choose_action(policy, b.probs(), weighting, &masked) else {
                return Ok(self.give_up(model));
            };
            if log::log_enabled!(log::Level::Debug) {
                let top: Vec<String> = (0..b.len())
                    .filter(|&k| b.probs()[k] > 0.01)
                    .map(|k| format!("{}:{:.2}", model.pomdp.states[k], b.probs()[k]))
                    .collect();
                log::debug!(
                    "{:indent$}h{height} {} value {value:.1} belief [{}]",
                    "",
                    model.pomdp.actions[a],
                    top.join(" "),
                    indent = 2 * self.recursion
                );
            }
            if a == model.terminate {
                return Ok(Flow::Terminate);
            }
            if Some(a) == model.help {
                return Ok(Flow::Help);
            }
            if chosen >= budget {
                return Ok(self.give_up(model));
            }
            chosen += 1;
            let la = model.lower_action[a].expect("non-special action");
            if height == depth {
                if self.concrete_actions >= self.budgets.global_actions {
                    self.abort = Some("global action budget exhausted".into());
                    return Ok(Flow::Abort);
                }
                let z = self.env.execute(la)?;
                self.concrete_actions += 1;
                self.trace.push((la, z));
                self.gb.update(self.bottom, self.sst, la, z)?;
                self.max_gb_violation = self.max_gb_violation.max(self.gb.max_violation(self.sst));
            } else {
                let h = self.hierarchy.expect("abstract actions need the hierarchy");
                let aa = &h.level(height).actions[la];
                let before = self.concrete_actions;
                if self.execute_policy(&aa.model, &aa.policy, height + 1)? == Flow::Abort {
                    return Ok(Flow::Abort);
                }
                if self.concrete_actions == before {
                    // Same belief would pick the same action again.
                    self.stalls += 1;
                    masked.insert(a);
                } else {
                    masked.clear();
                }
            }
        }
    }
}

/// Best `(action, value)` under the entropy-weighted value function, skipping
/// masked actions; ties go to the lowest vector index.
pub(crate) fn choose_action(
    policy: &AlphaVectorPolicy,
    b: &[f64],
    weighting: Option<(usize, f64)>,
    masked: &BTreeSet<usize>,
) -> Option<(usize, f64)> {
    // Zero entries add nothing to the dot products, so the support suffices.
    let support: Vec<usize> = (0..b.len()).filter(|&k| b[k] != 0.0).collect();
    let mut best: Option<(usize, f64)> = None;
    for v in policy.vectors.iter().filter(|v| !masked.contains(&v.action)) {
        let x: f64 = match weighting {
            Some((e, ratio)) if ratio != 0.0 => {
                let w = weighted_extra(v.values[e], ratio);
                support.iter().map(|&k| if k == e { w * b[k] } else { v.values[k] * b[k] }).sum()
            }
            _ => support.iter().map(|&k| v.values[k] * b[k]).sum(),
        };
        if best.is_none_or(|(_, bx)| x > bx) {
            best = Some((v.action, x));
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionReport {
    /// The bottom local policy terminated within budget.
    pub completed: bool,
    pub aborted: Option<String>,
    pub concrete_actions: usize,
    pub truncations: usize,
    pub stalls: usize,
    /// `(from, to)` local-policy indices, in order.
    pub transfers: Vec<(usize, usize)>,
    pub trace: Vec<(usize, usize)>,
    pub final_belief: Belief,
    pub max_gb_violation: f64,
    pub max_recursion: usize,
}

pub fn execute_hierarchical_policy<E: EnvironmentPort>(
    hp: &HierarchicalPolicy,
    hierarchy: &Hierarchy,
    b0: &Belief,
    env: &mut E,
    budgets: Budgets,
) -> Result<ExecutionReport, ExecError> {
    let mut ex = Executor::new(&hierarchy.sst, &hierarchy.bottom.pomdp, Some(hierarchy), env, b0, budgets)?;
    ex.max_gb_violation = ex.gb.max_violation(&hierarchy.sst);
    let mut transfers = Vec::new();
    let mut i = 0;
    let mut idle_helps = 0;
    let mut last_count = 0;
    while i < hp.policies.len() {
        let lp = &hp.policies[i];
        let flow = ex.execute_policy(&lp.model, &lp.policy, lp.height)?;
        if ex.concrete_actions != last_count {
            last_count = ex.concrete_actions;
            idle_helps = 0;
        }
        match flow {
            Flow::Abort => break,
            Flow::Terminate => {
                transfers.push((i, i + 1));
                i += 1;
            }
            Flow::Help => {
                debug_assert!(i > 0, "the top local policy has no help action");
                transfers.push((i, i - 1));
                i -= 1;
                idle_helps += 1;
                if idle_helps > budgets.oscillation_limit {
                    ex.abort = Some("oscillation between local policies".into());
                    break;
                }
            }
        }
    }
    Ok(ExecutionReport {
        completed: ex.abort.is_none() && i == hp.policies.len(),
        aborted: ex.abort.clone(),
        concrete_actions: ex.concrete_actions,
        truncations: ex.truncations,
        stalls: ex.stalls,
        transfers,
        trace: std::mem::take(&mut ex.trace),
        final_belief: ex.gb.leaf_belief(&hierarchy.sst),
        max_gb_violation: ex.max_gb_violation,
        max_recursion: ex.max_recursion,
    })
}

/// One delimited line per run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub concrete_actions: usize,
    pub planning_seconds: f64,
    pub execution_seconds: f64,
    pub final_distance: usize,
}

impl ExecutionRecord {
    pub const HEADER: &'static str =
        "task_id,seed,success,concrete_actions,planning_seconds,execution_seconds,final_distance";

    pub fn to_delimited(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self).expect("records serialize");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8").trim_end().to_string()
    }
}

//! Local POMDPs over a neighborhood of one level: abstract actions and local policies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{HierarchyError, Level};
use crate::pomdp::{Pomdp, PomdpBuilder, DEFAULT_DISCOUNT};

pub const EXTRA: &str = "extra";
pub const ABSB_G: &str = "absb_g";
pub const ABSB_NG: &str = "absb_ng";
pub const TERMINATE: &str = "terminate";
pub const HELP: &str = "help";
pub const NONE_OBS: &str = "none";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LocalKind {
    /// Transit from the core to any goal node; `terminate` from `extra` ends the action.
    AbstractAction,
    /// Reach a single goal node; `help` leaves `extra`.
    LocalPolicy,
}

/// What to build; node ids refer to the lower level's nodes.
#[derive(Clone, Debug)]
pub struct LocalSpec {
    pub kind: LocalKind,
    /// `C(s_i)` for an abstract action, the goal's siblings for a local policy.
    pub core: Vec<usize>,
    pub goals: BTreeSet<usize>,
    pub with_extra: bool,
    pub with_help: bool,
    /// Reward magnitude `ℜ`.
    pub reward: f64,
}

/// A built local POMDP plus the maps between it and its lower level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub kind: LocalKind,
    pub pomdp: Pomdp,
    /// Lower-level node ids of the non-special states, in local order.
    pub nodes: Vec<usize>,
    /// The first `n_core` entries of `nodes` are the core.
    pub n_core: usize,
    pub goals: BTreeSet<usize>,
    pub extra: Option<usize>,
    pub absb_g: usize,
    pub absb_ng: usize,
    pub terminate: usize,
    pub help: Option<usize>,
    /// Local action index to lower action index; `None` for `terminate`/`help`.
    pub lower_action: Vec<Option<usize>>,
    /// Lower observation index to local observation index.
    pub lower_obs: BTreeMap<usize, usize>,
    pub none_obs: usize,
    pub extra_obs: Option<usize>,
}

impl LocalModel {
    pub fn n_special(&self) -> usize {
        self.pomdp.n_states() - self.nodes.len()
    }

    /// Local index of lower node `id`, if it is modelled.
    pub fn local_index(&self, id: usize) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id)
    }

    /// Local observation for a lower observation; unmodelled ones read as `extra`.
    pub fn map_observation(&self, lower_obs: usize) -> Option<usize> {
        self.lower_obs.get(&lower_obs).copied().or(self.extra_obs)
    }

    pub fn is_special_action(&self, a: usize) -> bool {
        self.lower_action[a].is_none()
    }
}

/// Nodes outside `core` related to some core node, in level order.
pub fn outer_neighbors(level: &Level, core: &[usize], pairs: &BTreeSet<(usize, usize)>) -> Vec<usize> {
    let inside: BTreeSet<usize> = core.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &(a, b) in pairs {
        if inside.contains(&a) && !inside.contains(&b) {
            out.insert(b);
        }
        if inside.contains(&b) && !inside.contains(&a) {
            out.insert(a);
        }
    }
    let mut v: Vec<usize> = out.into_iter().collect();
    v.sort_by_key(|&n| level.position(n));
    v
}

pub fn build_local_model(
    level: &Level,
    pairs: &BTreeSet<(usize, usize)>,
    spec: &LocalSpec,
) -> Result<LocalModel, HierarchyError> {
    let lower = &level.pomdp;
    let mut nodes = spec.core.clone();
    nodes.extend(outer_neighbors(level, &spec.core, pairs));
    let n_loc = nodes.len();
    let lower_idx: Vec<usize> = nodes.iter().map(|&n| level.position(n).expect("node on this level")).collect();
    let local_of: BTreeMap<usize, usize> = lower_idx.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let core: BTreeSet<usize> = spec.core.iter().copied().collect();

    // Lower actions moving between two distinct local states.
    let relevant: Vec<usize> = (0..lower.n_actions())
        .filter(|&a| {
            lower_idx.iter().any(|&s| lower.row(s, a).iter().any(|o| o.target != s && local_of.contains_key(&o.target)))
        })
        .collect();
    if relevant.is_empty() {
        return Err(HierarchyError::DegenerateAction(
            nodes.iter().map(|&n| level.label(n)).collect::<Vec<_>>().join(" "),
        ));
    }

    let mut obs_set = BTreeSet::new();
    for &s in &lower_idx {
        for &a in &relevant {
            for &(o, _) in lower.obs_row(s, a) {
                obs_set.insert(o);
            }
        }
    }

    let mut states: Vec<String> = nodes.iter().map(|&n| level.label(n)).collect();
    let extra = spec.with_extra.then(|| {
        states.push(EXTRA.into());
        states.len() - 1
    });
    states.push(ABSB_G.into());
    let absb_g = states.len() - 1;
    states.push(ABSB_NG.into());
    let absb_ng = states.len() - 1;

    let mut actions: Vec<String> = relevant.iter().map(|&a| lower.actions[a].clone()).collect();
    let mut lower_action: Vec<Option<usize>> = relevant.iter().map(|&a| Some(a)).collect();
    actions.push(TERMINATE.into());
    lower_action.push(None);
    let terminate = actions.len() - 1;
    let help = spec.with_help.then(|| {
        actions.push(HELP.into());
        lower_action.push(None);
        actions.len() - 1
    });

    let mut observations: Vec<String> = obs_set.iter().map(|&o| lower.observations[o].clone()).collect();
    let lower_obs: BTreeMap<usize, usize> = obs_set.iter().enumerate().map(|(k, &o)| (o, k)).collect();
    observations.push(NONE_OBS.into());
    let none_obs = observations.len() - 1;
    let extra_obs = spec.with_extra.then(|| {
        observations.push(EXTRA.into());
        observations.len() - 1
    });

    let r_pos = spec.reward;
    let r_neg = -spec.reward;
    let allowed = |k: usize| core.contains(&nodes[k]) || spec.goals.contains(&nodes[k]);
    let goal_local: BTreeSet<usize> = (0..n_loc).filter(|&k| spec.goals.contains(&nodes[k])).collect();
    let lp = spec.kind == LocalKind::LocalPolicy;

    let mut b = PomdpBuilder::new(states, actions, observations).discount(DEFAULT_DISCOUNT);
    let mut rewards: Vec<(usize, usize, usize, f64)> = Vec::new();
    let n_states = b.n_states();

    for (a, lower_a) in lower_action.iter().enumerate() {
        for s in 0..n_states {
            let mut row: Vec<(usize, f64)> = Vec::new();
            if s == absb_g || s == absb_ng {
                row.push((s, 1.0));
            } else if Some(a) == help {
                row.push((absb_ng, 1.0));
            } else if a == terminate {
                let t = if Some(s) == extra {
                    if lp {
                        s
                    } else {
                        absb_ng
                    }
                } else if goal_local.contains(&s) {
                    absb_g
                } else {
                    absb_ng
                };
                row.push((t, 1.0));
            } else if Some(s) == extra {
                row.push((s, 1.0));
            } else {
                let la = lower_a.expect("non-special action");
                let mut leaked = 0.0;
                for o in lower.row(lower_idx[s], la) {
                    match local_of.get(&o.target) {
                        Some(&t) => row.push((t, o.prob)),
                        None => leaked += o.prob,
                    }
                }
                if leaked > 0.0 {
                    match extra {
                        Some(e) => row.push((e, leaked)),
                        None => return Err(HierarchyError::Coverage(level.label(nodes[s]))),
                    }
                }
            }
            for (t, p) in row {
                b.add_transition(s, a, t, p);
                let r = if a == terminate {
                    if s == absb_g {
                        r_pos
                    } else if s == absb_ng {
                        if lp {
                            r_neg
                        } else {
                            0.0
                        }
                    } else if lp {
                        if goal_local.contains(&s) {
                            r_pos
                        } else {
                            r_neg
                        }
                    } else if s < n_loc && core.contains(&nodes[s]) {
                        r_neg
                    } else {
                        r_pos
                    }
                } else if Some(a) == help {
                    if Some(s) == extra {
                        r_pos
                    } else {
                        r_neg
                    }
                } else if Some(s) == extra || Some(t) == extra || (t < n_loc && !allowed(t)) {
                    r_neg
                } else {
                    match level.abstract_source(lower_a.expect("non-special action")) {
                        Some(m) if s >= n_loc || nodes[s] != m => r_neg,
                        _ => -1.0,
                    }
                };
                rewards.push((s, a, t, r));
            }
        }
    }
    for (s, a, t, r) in rewards {
        b.set_reward(s, a, t, r);
    }

    for (a, lower_a) in lower_action.iter().enumerate() {
        for s in 0..n_states {
            match lower_a {
                Some(la) if s < n_loc => {
                    for &(o, q) in lower.obs_row(lower_idx[s], *la) {
                        b.add_observation(s, a, lower_obs[&o], q);
                    }
                }
                Some(_) if Some(s) == extra => b.add_observation(s, a, extra_obs.expect("extra observation"), 1.0),
                _ => b.add_observation(s, a, none_obs, 1.0),
            }
        }
    }

    Ok(LocalModel {
        kind: spec.kind,
        pomdp: b.build()?,
        nodes,
        n_core: spec.core.len(),
        goals: spec.goals.clone(),
        extra,
        absb_g,
        absb_ng,
        terminate,
        help,
        lower_action,
        lower_obs,
        none_obs,
        extra_obs,
    })
}

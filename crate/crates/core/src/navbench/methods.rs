use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::world::{generate_world, knowledge_base_text, shortest_path, EnvConfig, GridWorld, InitialBelief};
use super::NavError;
use crate::executive::{
    build_hierarchical_policy, execute_hierarchical_policy, local_policy_seeds, Budgets, Executor, Flow, SimulatedEnv,
};
use crate::grounding::{build_bottom, neighbor_pairs_bottom, BottomPomdp};
use crate::hierarchy::{
    abstract_action_seeds, bottom_level, build_hierarchy, build_local_model, build_sst, lift_neighbors, Hierarchy,
    HierarchyParams, Level, LocalKind, LocalModel, LocalSpec, NeighborIndex, Sst,
};
use crate::kb::{parse_general, parse_specific, KnowledgeBase};
use crate::par::Execution;
use crate::pbvi::{self, SolverParams};
use crate::pomdp::{AlphaVectorPolicy, Belief};
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Fp,
    Tlp,
    Hp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Fp, Method::Tlp, Method::Hp];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Fp => "FP",
            Method::Tlp => "TLP",
            Method::Hp => "HP",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = NavError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FP" => Ok(Method::Fp),
            "TLP" => Ok(Method::Tlp),
            "HP" => Ok(Method::Hp),
            _ => Err(NavError::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

/// A generated environment with its grounded bottom POMDP and state-space tree.
pub struct Scenario {
    pub world: GridWorld,
    pub general: String,
    pub specific: String,
    pub kb: KnowledgeBase,
    pub bp: BottomPomdp,
    pub sst: Sst,
    pub neighbors: NeighborIndex,
    pub bottom: Level,
}

impl Scenario {
    pub fn generate(cfg: &EnvConfig) -> Result<Self, NavError> {
        let world = generate_world(cfg)?;
        let (general, specific) = knowledge_base_text(&world);
        let kb = parse_specific(&specific, &parse_general(&general)?)?;
        let bp = build_bottom(&kb)?;
        let sst = build_sst(&kb, &bp)?;
        let neighbors = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
        let bottom = bottom_level(&bp, &sst);
        debug_assert!((0..world.n_cells()).all(|c| bp.pomdp.states[c] == world.cell_label(c)));
        Ok(Self { world, general, specific, kb, bp, sst, neighbors, bottom })
    }

    pub fn depth(&self) -> usize {
        self.sst.depth()
    }

    pub fn n_cells(&self) -> usize {
        self.world.n_cells()
    }

    pub fn initial_belief(&self, start: usize) -> Belief {
        match self.world.config.initial_belief {
            InitialBelief::KnownStart => Belief::delta(self.n_cells(), start),
            InitialBelief::Uniform => Belief::uniform(self.n_cells()),
        }
    }

    fn building_node(&self, b: usize) -> Result<usize, NavError> {
        self.sst.find(&format!("b{b}")).ok_or_else(|| NavError::InvalidConfig(format!("no building b{b}")))
    }

    /// Buildings ordered by the belief mass they hold, ties to the lower index.
    fn likeliest_building(&self, ex_probs: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for b in 0..self.world.config.num_buildings {
            let p = self.building_node(b).map_or(0.0, |n| ex_probs[n]);
            if p > best.1 {
                best = (b, p);
            }
        }
        best.0
    }

    pub fn hierarchy(&self, params: &HierarchyParams) -> Result<Hierarchy, NavError> {
        Ok(build_hierarchy(&self.bp, self.sst.clone(), self.neighbors.clone(), params)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub start: usize,
    pub goal: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub initial: usize,
    pub goal: usize,
    pub success: bool,
    pub actions: usize,
    pub sp_initial: usize,
    pub sp_final: usize,
    /// Empty, or why the run stopped early.
    pub note: String,
    pub planning_seconds: f64,
}

/// Shared per-method settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub reward: f64,
    pub solver: SolverParams,
}

impl MethodParams {
    pub fn from_hierarchy(h: &HierarchyParams) -> Self {
        Self { reward: h.reward, solver: SolverParams { execution: Execution::Sequential, ..h.solver.clone() } }
    }
}

fn finish(
    sc: &Scenario,
    method: Method,
    task: Task,
    outcome: Result<(bool, usize, usize, String), NavError>,
    planning_seconds: f64,
) -> RunRecord {
    let sp_initial = shortest_path(&sc.world, task.start, task.goal).unwrap_or(usize::MAX);
    let (success, actions, final_cell, note) = match outcome {
        Ok(o) => o,
        Err(e) => (false, 0, task.start, format!("error: {e}")),
    };
    RunRecord {
        method,
        initial: task.start,
        goal: task.goal,
        success,
        actions,
        sp_initial,
        sp_final: shortest_path(&sc.world, final_cell, task.goal).unwrap_or(usize::MAX),
        note,
        planning_seconds,
    }
}

fn note_of(flow: Flow, abort: &Option<String>) -> String {
    match (flow, abort) {
        (_, Some(reason)) => format!("aborted: {reason}"),
        (Flow::Help, None) => "gave up".into(),
        _ => String::new(),
    }
}

/// One POMDP over every cell with a goal-terminate reward, solved from the
/// task's initial belief.
pub fn run_fp(sc: &Scenario, task: Task, params: &MethodParams, seed: u64) -> RunRecord {
    let t0 = Instant::now();
    let depth = sc.depth();
    let b0 = sc.initial_belief(task.start);
    let spec = LocalSpec {
        kind: LocalKind::LocalPolicy,
        core: sc.sst.nodes_at(depth).to_vec(),
        goals: [sc.sst.leaf(task.goal)].into(),
        with_extra: false,
        with_help: false,
        reward: params.reward,
    };
    let planned = build_local_model(&sc.bottom, sc.neighbors.at(depth), &spec)
        .map_err(NavError::from)
        .and_then(|model| {
            // Expand from the single start point until the shared point budget can fill.
            let mut s = params.solver.with_seed(derive_seed(seed, &[b"fp"]));
            s.expansions = s.expansions.max(s.belief_points.next_power_of_two().trailing_zeros() as usize);
            let mut start = vec![0.0; model.pomdp.n_states()];
            for (k, &n) in model.nodes.iter().enumerate() {
                start[k] = b0.probs()[sc.sst.node(n).level_index];
            }
            let policy = pbvi::solve(&model.pomdp, &[Belief::new(start)?], &s)?;
            Ok((model, policy))
        });
    let planning = t0.elapsed().as_secs_f64();
    let outcome = planned.and_then(|(model, policy)| {
        let mut env = SimulatedEnv::new(&sc.bp.pomdp, task.start, derive_seed(seed, &[b"env"]));
        let budgets = Budgets::for_cells(sc.n_cells());
        let (flow, actions, abort) = {
            let mut ex = Executor::new(&sc.sst, &sc.bp.pomdp, None, &mut env, &b0, budgets)?;
            let flow = ex.execute_policy(&model, &policy, depth)?;
            (flow, ex.concrete_actions, ex.abort.clone())
        };
        let fin = env.state();
        let success = flow == Flow::Terminate && abort.is_none() && fin == task.goal;
        Ok((success, actions, fin, note_of(flow, &abort)))
    });
    finish(sc, Method::Fp, task, outcome, planning)
}

/// Building-to-building policies computed once per environment.
pub struct TlpInit {
    pub traversals: BTreeMap<(usize, usize), (LocalModel, AlphaVectorPolicy)>,
    pub init_seconds: f64,
}

pub fn init_tlp(sc: &Scenario, params: &MethodParams, seed: u64, execution: Execution) -> Result<TlpInit, NavError> {
    let t0 = Instant::now();
    let depth = sc.depth();
    let pairs: Vec<(usize, usize)> = sc.neighbors.at(1).iter().copied().collect();
    let built = execution.map(&pairs, |&(i, j)| -> Result<_, NavError> {
        let spec = LocalSpec {
            kind: LocalKind::AbstractAction,
            core: sc.sst.leaves_under(i),
            goals: sc.sst.leaves_under(j).into_iter().collect(),
            with_extra: true,
            with_help: false,
            reward: params.reward,
        };
        let model = build_local_model(&sc.bottom, sc.neighbors.at(depth), &spec)?;
        let key = format!("{}->{}", sc.sst.node(i).label, sc.sst.node(j).label);
        let s = params.solver.with_seed(derive_seed(seed, &[b"tlp", key.as_bytes()]));
        let policy = pbvi::solve(&model.pomdp, &abstract_action_seeds(&model), &s)?;
        Ok(((i, j), (model, policy)))
    });
    let traversals = built.into_iter().collect::<Result<BTreeMap<_, _>, _>>()?;
    Ok(TlpInit { traversals, init_seconds: t0.elapsed().as_secs_f64() })
}

fn building_path(sc: &Scenario, from: usize, to: usize) -> Option<Vec<usize>> {
    let mut prev: BTreeMap<usize, usize> = BTreeMap::new();
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(b) = queue.pop_front() {
        if b == to {
            let mut path = vec![to];
            while let Some(&p) = prev.get(path.last().unwrap()) {
                path.push(p);
            }
            path.reverse();
            return Some(path);
        }
        for n in sc.neighbors.neighbors_of(1, b) {
            if seen.insert(n) {
                prev.insert(n, b);
                queue.push_back(n);
            }
        }
    }
    None
}

/// Traverses buildings, then runs a cell-level policy over the goal building.
/// Help from the goal-building policy restarts from the likeliest building.
pub fn run_tlp(sc: &Scenario, init: &TlpInit, task: Task, params: &MethodParams, seed: u64) -> Result<RunRecord, NavError> {
    if sc.world.config.initial_belief != InitialBelief::KnownStart {
        return Err(NavError::NeedsKnownStart);
    }
    let t0 = Instant::now();
    let depth = sc.depth();
    let goal_building = sc.building_node(sc.world.building_of(task.goal))?;
    let multi = sc.world.config.num_buildings > 1;
    let planned = (|| -> Result<_, NavError> {
        let start_building = sc.building_node(sc.world.building_of(task.start))?;
        let path = building_path(sc, start_building, goal_building).ok_or(NavError::Unreachable(task.start, task.goal))?;
        let spec = LocalSpec {
            kind: LocalKind::LocalPolicy,
            core: sc.sst.leaves_under(goal_building),
            goals: [sc.sst.leaf(task.goal)].into(),
            with_extra: multi,
            with_help: multi,
            reward: params.reward,
        };
        let model = build_local_model(&sc.bottom, sc.neighbors.at(depth), &spec)?;
        let s = params.solver.with_seed(derive_seed(seed, &[b"tlp-goal"]));
        let policy = pbvi::solve(&model.pomdp, &local_policy_seeds(&model), &s)?;
        Ok((path, model, policy))
    })();
    let planning = t0.elapsed().as_secs_f64();

    let outcome = planned.and_then(|(first_path, model, policy)| {
        let mut env = SimulatedEnv::new(&sc.bp.pomdp, task.start, derive_seed(seed, &[b"env"]));
        let b0 = sc.initial_belief(task.start);
        let budgets = Budgets::for_cells(sc.n_cells());
        let (flow, actions, abort) = {
            let mut ex = Executor::new(&sc.sst, &sc.bp.pomdp, None, &mut env, &b0, budgets)?;
            let mut path = first_path;
            let mut idle = 0;
            let mut last = 0;
            let flow = loop {
                let mut stopped = false;
                for w in path.windows(2) {
                    let (m, p) = &init.traversals[&(w[0], w[1])];
                    if ex.execute_policy(m, p, depth)? == Flow::Abort {
                        stopped = true;
                        break;
                    }
                }
                if stopped {
                    break Flow::Abort;
                }
                let flow = ex.execute_policy(&model, &policy, depth)?;
                if flow != Flow::Help {
                    break flow;
                }
                if ex.concrete_actions != last {
                    last = ex.concrete_actions;
                    idle = 0;
                }
                idle += 1;
                if idle > budgets.oscillation_limit {
                    ex.abort = Some("oscillation between policies".into());
                    break Flow::Abort;
                }
                let here = sc.building_node(sc.likeliest_building(ex.gb.probs()))?;
                path = building_path(sc, here, goal_building).ok_or(NavError::Unreachable(task.start, task.goal))?;
            };
            (flow, ex.concrete_actions, ex.abort.clone())
        };
        let fin = env.state();
        let success = flow == Flow::Terminate && abort.is_none() && fin == task.goal;
        Ok((success, actions, fin, note_of(flow, &abort)))
    });
    Ok(finish(sc, Method::Tlp, task, outcome, planning))
}

/// Builds and executes a hierarchical policy over a prebuilt hierarchy.
pub fn run_hp(sc: &Scenario, hierarchy: &Hierarchy, task: Task, params: &MethodParams, seed: u64) -> RunRecord {
    let t0 = Instant::now();
    let solver = params.solver.with_seed(derive_seed(seed, &[b"hp"]));
    let planned = build_hierarchical_policy(sc.sst.leaf(task.goal), hierarchy, &solver, Execution::Sequential);
    let planning = t0.elapsed().as_secs_f64();
    let outcome = planned.map_err(NavError::from).and_then(|hp| {
        let mut env = SimulatedEnv::new(&sc.bp.pomdp, task.start, derive_seed(seed, &[b"env"]));
        let b0 = sc.initial_belief(task.start);
        let report = execute_hierarchical_policy(&hp, hierarchy, &b0, &mut env, Budgets::for_cells(sc.n_cells()))?;
        let fin = env.state();
        let note = match (&report.aborted, report.completed) {
            (Some(r), _) => format!("aborted: {r}"),
            (None, false) => "incomplete".into(),
            _ => String::new(),
        };
        Ok((report.completed && fin == task.goal, report.concrete_actions, fin, note))
    });
    finish(sc, Method::Hp, task, outcome, planning)
}

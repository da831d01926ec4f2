use proptest::{prop_assert, prop_assert_eq, proptest};

use super::belief::{extra_entropy_ratio, weight_extra};
use super::run::choose_action;
use super::*;
use crate::hierarchy::{Hierarchy, HierarchyParams, Sst};
use crate::kb::{parse_general, parse_specific, KnowledgeBase};
use crate::par::Execution;
use crate::pbvi::SolverParams;
use crate::pomdp::{belief_update, best_action, AlphaVector, AlphaVectorPolicy, Belief};

const GENERAL: &str = include_str!("../../tests/fixtures/fig3_general.kb");
const SPECIFIC: &str = include_str!("../../tests/fixtures/fig3_specific.kb");
const TOY_GENERAL: &str = include_str!("../../tests/fixtures/toy2_general.kb");
const TOY_SPECIFIC: &str = include_str!("../../tests/fixtures/toy2_specific.kb");

fn kb_of(general: &str, specific: &str) -> KnowledgeBase {
    parse_specific(specific, &parse_general(general).unwrap()).unwrap()
}

fn solver() -> SolverParams {
    SolverParams { belief_points: 48, expansions: 3, backup_sweeps: 60, ..SolverParams::default() }
}

fn fixture() -> Hierarchy {
    let params = HierarchyParams { solver: solver(), ..HierarchyParams::default() };
    Hierarchy::from_kb(&kb_of(GENERAL, SPECIFIC), &params).unwrap()
}

fn node(sst: &Sst, label: &str) -> usize {
    sst.find(label).unwrap()
}

fn labels(sst: &Sst, ids: &[usize]) -> Vec<String> {
    ids.iter().map(|&n| sst.node(n).label.clone()).collect()
}

#[test]
fn hierarchical_state_of_c12() {
    let h = fixture();
    let path = hierarchical_state(node(&h.sst, "C12"), &h.sst).unwrap();
    assert_eq!(labels(&h.sst, &path), ["root", "B2", "R3", "S6", "C12"]);
    for w in path.windows(2) {
        assert_eq!(h.sst.node(w[1]).parent, Some(w[0]));
    }
    assert!(matches!(hierarchical_state(node(&h.sst, "S6"), &h.sst), Err(ExecError::NotALeaf(_))));
}

#[test]
fn local_policies_for_c12() {
    let h = fixture();
    let hp = build_hierarchical_policy(node(&h.sst, "C12"), &h, &solver(), Execution::Parallel).unwrap();
    assert_eq!(hp.policies.len(), 4);
    assert_eq!(hp.policies.iter().map(|p| p.height).collect::<Vec<_>>(), [1, 2, 3, 4]);

    let top = &hp.policies[0].model.pomdp;
    assert_eq!(top.states, ["B1", "B2", "absb_g", "absb_ng"]);
    assert!(!top.actions.iter().any(|a| a == "help"));
    assert!(!top.observations.iter().any(|o| o == "extra"));

    for lp in &hp.policies {
        let p = &lp.model.pomdp;
        assert!(p.row_violations(1e-9).is_empty());
        assert!(p.reward_gaps().is_empty());
        assert_eq!(lp.model.help.is_some(), lp.model.extra.is_some());
        assert_eq!(lp.model.extra.is_some(), lp.height > 1);
    }

    let cells = &hp.policies[3].model;
    let p = &cells.pomdp;
    let (extra, t, help) = (cells.extra.unwrap(), cells.terminate, cells.help.unwrap());
    assert_eq!(p.transition_prob(extra, t, extra), 1.0);
    let c12 = p.state_index("C12").unwrap();
    let c11 = p.state_index("C11").unwrap();
    assert_eq!(p.transition_prob(c12, t, cells.absb_g), 1.0);
    assert_eq!(p.transition_prob(c11, t, cells.absb_ng), 1.0);
    assert_eq!(p.reward(extra, help, cells.absb_ng), Some(100.0));
    assert_eq!(p.reward(c11, help, cells.absb_ng), Some(-100.0));
    assert_eq!(p.reward(c12, t, cells.absb_g), Some(100.0));
    assert_eq!(p.reward(c11, t, cells.absb_ng), Some(-100.0));
    assert_eq!(p.transition_prob(cells.absb_g, help, cells.absb_g), 1.0);
}

#[test]
fn goal_height_is_checked() {
    let h = fixture();
    let path = hierarchical_state(node(&h.sst, "C12"), &h.sst).unwrap();
    assert!(matches!(build_local_policy(&path, 0, &h, &solver()), Err(ExecError::GoalHeight(0))));
    assert!(matches!(build_local_policy(&path, 5, &h, &solver()), Err(ExecError::GoalHeight(5))));
}

#[test]
fn global_belief_aggregates() {
    let h = fixture();
    let sst = &h.sst;
    let gb = GlobalBelief::build(&Belief::delta(12, 0), sst).unwrap();
    for l in ["C1", "S1", "R1", "B1", "root"] {
        assert_eq!(gb.prob(node(sst, l)), 1.0, "{l}");
    }
    assert_eq!(gb.prob(node(sst, "B2")), 0.0);

    let gb = GlobalBelief::build(&Belief::uniform(12), sst).unwrap();
    for s in ["S1", "S2", "S3", "S4", "S5", "S6"] {
        assert!((gb.prob(node(sst, s)) - 2.0 / 12.0).abs() < 1e-15);
    }
    for r in ["R1", "R2", "R3"] {
        assert!((gb.prob(node(sst, r)) - 4.0 / 12.0).abs() < 1e-15);
    }
    assert!((gb.prob(node(sst, "B1")) - 8.0 / 12.0).abs() < 1e-15);
    assert!(gb.max_violation(sst) < 1e-12);
    assert!(GlobalBelief::build(&Belief::uniform(5), sst).is_err());
}

#[test]
fn global_update_equals_flat_update_then_sums() {
    let h = fixture();
    let (sst, bp) = (&h.sst, &h.bottom.pomdp);
    let mut gb = GlobalBelief::build(&Belief::uniform(12), sst).unwrap();
    let mut flat = Belief::uniform(12);
    for (a, z) in [(0, 2), (3, 3), (3, 6), (1, 3), (2, 2)] {
        gb.update(bp, sst, a, z).unwrap();
        flat = belief_update(bp, &flat, a, z).unwrap().belief;
        for (s, &leaf) in sst.nodes_at(4).iter().enumerate() {
            assert!((gb.prob(leaf) - flat.probs()[s]).abs() < 1e-15);
        }
        for h_ in 0..4 {
            for &n in sst.nodes_at(h_) {
                let direct: f64 = sst.leaves_under(n).iter().map(|&l| flat.probs()[sst.node(l).level_index]).sum();
                assert!((gb.prob(n) - direct).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mapping_to_local_spaces() {
    let h = fixture();
    let sst = &h.sst;
    let path = hierarchical_state(node(sst, "C12"), sst).unwrap();
    let lp = build_local_policy(&path, 3, &h, &solver()).unwrap();
    // Sections: S5, S6 plus outer neighbors; extra holds the rest.
    let inside = Belief::delta(12, node(sst, "C11") - 1);
    let gb = GlobalBelief::build(&inside, sst).unwrap();
    let b = map_belief_to_local(&lp.model, &gb, sst, 3).unwrap();
    assert_eq!(b.probs()[lp.model.extra.unwrap()], 0.0);

    let mut probs = vec![0.0; 12];
    probs[sst.node(node(sst, "C11")).level_index] = 0.7;
    probs[sst.node(node(sst, "C1")).level_index] = 0.3;
    let gb = GlobalBelief::build(&Belief::new(probs).unwrap(), sst).unwrap();
    let b = map_belief_to_local(&lp.model, &gb, sst, 3).unwrap();
    assert!((b.probs()[lp.model.extra.unwrap()] - 0.3).abs() < 1e-15);
    assert_eq!(b.probs()[lp.model.absb_g], 0.0);
    assert!((b.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut no_extra = lp.model.clone();
    no_extra.extra = None;
    assert!(matches!(map_belief_to_local(&no_extra, &gb, sst, 3), Err(ExecError::Coverage { height: 3, .. })));
    assert!(matches!(entropy_weight(&lp.policy, &no_extra, &gb, sst, 3), Err(ExecError::NoExtra)));
}

fn policy_of(vectors: Vec<Vec<f64>>) -> AlphaVectorPolicy {
    let n = vectors[0].len();
    AlphaVectorPolicy::new(
        vectors.into_iter().map(|values| AlphaVector { action: 0, values }).collect(),
        (0..n).map(|i| format!("s{i}")).collect(),
        vec!["a".into()],
    )
    .unwrap()
}

#[test]
fn entropy_weight_arithmetic() {
    assert_eq!(extra_entropy_ratio(&[0.0, 0.4, 0.0]), 0.0);
    assert_eq!(extra_entropy_ratio(&[0.2]), 0.0);
    assert_eq!(extra_entropy_ratio(&[0.0, 0.0]), 0.0);
    assert_eq!(extra_entropy_ratio(&[0.1; 7]), 1.0);
    let r = extra_entropy_ratio(&[0.25, 0.05]);
    let p: [f64; 2] = [0.25 / 0.3, 0.05 / 0.3];
    let e = -(p[0] * p[0].log2() + p[1] * p[1].log2());
    assert!((r - e).abs() < 1e-12, "base-2 entropy over log2(2)");

    let pol = policy_of(vec![vec![1.0, -10.0, 3.0]]);
    let w = weight_extra(&pol, 1, 1.0);
    assert_eq!(w.vectors[0].values, [1.0, -10.0 / 11.0, 3.0]);
    assert_eq!(weight_extra(&pol, 1, 0.0), pol);
}

#[test]
fn entropy_weight_from_global_belief() {
    let h = fixture();
    let sst = &h.sst;
    let path = hierarchical_state(node(sst, "C12"), sst).unwrap();
    let lp = build_local_policy(&path, 4, &h, &solver()).unwrap();
    let e = lp.model.extra.unwrap();
    // Outside mass on a single cell: unchanged.
    let mut probs = vec![0.0; 12];
    probs[0] = 0.5;
    probs[sst.node(node(sst, "C12")).level_index] = 0.5;
    let gb = GlobalBelief::build(&Belief::new(probs).unwrap(), sst).unwrap();
    assert_eq!(entropy_weight(&lp.policy, &lp.model, &gb, sst, 4).unwrap(), lp.policy);
    // Uniform over everything: every outside cell is equally likely.
    let gb = GlobalBelief::build(&Belief::uniform(12), sst).unwrap();
    let w = entropy_weight(&lp.policy, &lp.model, &gb, sst, 4).unwrap();
    for (old, new) in lp.policy.vectors.iter().zip(&w.vectors) {
        assert_eq!(new.values[e], old.values[e] / (1.0 + old.values[e].abs()));
    }
}

proptest! {
    #[test]
    fn weighting_only_shrinks_extra(
        values in proptest::collection::vec(proptest::collection::vec(-500.0f64..500.0, 5), 1..6),
        extra in 0usize..5,
        outside in proptest::collection::vec(0.0f64..1.0, 0..8),
    ) {
        let pol = policy_of(values);
        let ratio = extra_entropy_ratio(&outside);
        prop_assert!((0.0..=1.0).contains(&ratio));
        let w = weight_extra(&pol, extra, ratio);
        for (old, new) in pol.vectors.iter().zip(&w.vectors) {
            for k in 0..5 {
                if k != extra {
                    prop_assert_eq!(old.values[k].to_bits(), new.values[k].to_bits());
                }
            }
            prop_assert!(new.values[extra].abs() <= old.values[extra].abs());
        }
    }
}

proptest! {
    #[test]
    fn weighted_choice_matches_weighted_policy(
        values in proptest::collection::vec(proptest::collection::vec(-500.0f64..500.0, 4), 1..8),
        raw in proptest::collection::vec(0.0f64..1.0, 4),
        extra in 0usize..4,
        ratio in 0.0f64..1.0,
    ) {
        let pol = policy_of(values);
        let b = Belief::normalized(raw.iter().map(|x| x + 1e-3).collect()).unwrap();
        let reference = best_action(&weight_extra(&pol, extra, ratio), &b).unwrap();
        let fast = choose_action(&pol, b.probs(), Some((extra, ratio)), &Default::default()).unwrap();
        prop_assert_eq!(fast.0, reference.0);
        prop_assert_eq!(fast.1.to_bits(), reference.1.to_bits());
    }
}

fn run_fixture(h: &Hierarchy, start: &str, goal: &str, seed: u64) -> (ExecutionReport, usize, usize) {
    let hp = build_hierarchical_policy(node(&h.sst, goal), h, &solver(), Execution::Parallel).unwrap();
    let s0 = h.sst.node(node(&h.sst, start)).level_index;
    let mut env = SimulatedEnv::new(&h.bottom.pomdp, s0, seed);
    let report = execute_hierarchical_policy(&hp, h, &Belief::delta(12, s0), &mut env, Budgets::for_cells(12)).unwrap();
    (report, env.state(), env.steps)
}

#[test]
fn known_start_reaches_goal() {
    let h = fixture();
    let goal = h.sst.node(node(&h.sst, "C12")).level_index;
    let mut hits = 0;
    for seed in 0..10 {
        let (report, fin, steps) = run_fixture(&h, "C1", "C12", seed);
        assert_eq!(report.concrete_actions, steps);
        assert!(report.max_recursion <= h.depth());
        assert!(report.max_gb_violation < 1e-9);
        if report.completed && fin == goal {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits}/10");
}

#[test]
fn start_at_goal_takes_no_action() {
    let h = fixture();
    let (report, fin, _) = run_fixture(&h, "C12", "C12", 0);
    assert!(report.completed);
    assert_eq!(report.concrete_actions, 0);
    assert_eq!(h.sst.node(h.sst.leaf(fin)).label, "C12");
    assert_eq!(report.transfers, [(0, 1), (1, 2), (2, 3), (3, 4)]);
}

#[test]
fn final_belief_is_the_chained_flat_filter() {
    let h = fixture();
    let (report, _, _) = run_fixture(&h, "C3", "C8", 4);
    let mut flat = Belief::delta(12, 2);
    for &(a, z) in &report.trace {
        flat = belief_update(&h.bottom.pomdp, &flat, a, z).unwrap().belief;
    }
    assert!(report.final_belief.l1_distance(&flat) < 1e-12);
}

#[test]
fn runs_are_reproducible() {
    let h = fixture();
    let a = run_fixture(&h, "C9", "C6", 11);
    let b = run_fixture(&h, "C9", "C6", 11);
    assert_eq!(a, b);
}

#[test]
fn noiseless_corridor_takes_shortest_path() {
    let general = TOY_GENERAL
        .replace("trans left rel here 0.2\n", "")
        .replace("trans right rel here 0.2\n", "")
        .replace("left_of 0.8", "left_of 1")
        .replace("right_of 0.8", "right_of 1")
        .replace("see_here 0.8", "see_here 1")
        .replace("obs left rel see_left 0.1\n", "")
        .replace("obs left rel see_right 0.1\n", "")
        .replace("obs right rel see_left 0.1\n", "")
        .replace("obs right rel see_right 0.1\n", "");
    let params = HierarchyParams { solver: solver(), ..HierarchyParams::default() };
    let h = Hierarchy::from_kb(&kb_of(&general, TOY_SPECIFIC), &params).unwrap();
    for (start, goal) in [(0, 3), (3, 0), (1, 2), (0, 1), (2, 2)] {
        let hp = build_hierarchical_policy(h.sst.leaf(goal), &h, &solver(), Execution::Sequential).unwrap();
        let mut env = SimulatedEnv::new(&h.bottom.pomdp, start, 0);
        let r = execute_hierarchical_policy(&hp, &h, &Belief::delta(4, start), &mut env, Budgets::for_cells(4)).unwrap();
        assert!(r.completed);
        assert_eq!(env.state(), goal);
        assert_eq!(r.concrete_actions, start.abs_diff(goal), "{start} -> {goal}");
    }
}

#[test]
fn record_line() {
    let r = ExecutionRecord {
        task_id: "C1->C12".into(),
        seed: 3,
        success: true,
        concrete_actions: 9,
        planning_seconds: 0.5,
        execution_seconds: 0.25,
        final_distance: 0,
    };
    assert_eq!(r.to_delimited(), "C1->C12,3,true,9,0.5,0.25,0");
    assert_eq!(ExecutionRecord::HEADER.split(',').count(), 7);
}

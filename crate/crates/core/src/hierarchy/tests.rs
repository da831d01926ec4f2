use std::collections::{BTreeMap, BTreeSet};

use proptest::{prop_assert, prop_assert_eq, proptest};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grounding::{build_bottom, neighbor_pairs_bottom};
use crate::kb::{parse_general, parse_specific};
use crate::pomdp::{belief_update, best_action};

const GENERAL: &str = include_str!("../../tests/fixtures/fig3_general.kb");
const SPECIFIC: &str = include_str!("../../tests/fixtures/fig3_specific.kb");
const TOY_GENERAL: &str = include_str!("../../tests/fixtures/toy2_general.kb");
const TOY_SPECIFIC: &str = include_str!("../../tests/fixtures/toy2_specific.kb");

fn kb_of(general: &str, specific: &str) -> KnowledgeBase {
    parse_specific(specific, &parse_general(general).unwrap()).unwrap()
}

fn fixture() -> (KnowledgeBase, BottomPomdp, Sst) {
    let kb = kb_of(GENERAL, SPECIFIC);
    let bp = build_bottom(&kb).unwrap();
    let sst = build_sst(&kb, &bp).unwrap();
    (kb, bp, sst)
}

fn quick() -> HierarchyParams {
    HierarchyParams {
        solver: SolverParams { belief_points: 32, expansions: 2, backup_sweeps: 40, ..SolverParams::default() },
        ..HierarchyParams::default()
    }
}

fn node(sst: &Sst, label: &str) -> usize {
    sst.find(label).unwrap()
}

#[test]
fn fixture_tree_shape() {
    let (_, _, sst) = fixture();
    assert_eq!(sst.depth(), 4);
    let counts: Vec<usize> = (0..=4).rev().map(|h| sst.nodes_at(h).len()).collect();
    assert_eq!(counts, [12, 6, 3, 2, 1]);
    let path: Vec<&str> = sst.path_to(node(&sst, "C12")).iter().map(|&n| sst.node(n).label.as_str()).collect();
    assert_eq!(path, ["root", "B2", "R3", "S6", "C12"]);
    for (s, &leaf) in sst.nodes_at(4).iter().enumerate() {
        assert_eq!(sst.leaf(s), leaf);
        assert_eq!(sst.node(leaf).level_index, s);
    }
}

#[test]
fn single_value_chain() {
    let general = "module m\nvar v\naction stay modifies v\nrel same vv over v\nrel see vo over v\ntrans stay rel same 1\nobs stay rel see 1\nhier over v\n";
    let specific = "values v a\nobservations v a\nabstract top\npair same a a\npair see a a\nhpair a top\n";
    let kb = kb_of(general, specific);
    let sst = build_sst(&kb, &build_bottom(&kb).unwrap()).unwrap();
    assert_eq!(sst.nodes.len(), 3);
    assert_eq!(sst.depth(), 2);
    assert_eq!(sst.path_to(sst.leaf(0)).len(), 3);
}

#[test]
fn ragged_tree_is_rejected() {
    let specific = SPECIFIC.replace("hpair C12 S6", "hpair C12 R3");
    let kb = kb_of(GENERAL, &specific);
    let bp = build_bottom(&kb).unwrap();
    assert!(matches!(build_sst(&kb, &bp), Err(HierarchyError::Ragged(_))));
}

#[test]
fn lifted_neighbors_of_fixture() {
    let (kb, bp, sst) = fixture();
    let idx = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
    let (s1, s3) = (node(&sst, "S1"), node(&sst, "S3"));
    assert!(idx.are_neighbors(3, s1, s3));
    assert!(idx.are_neighbors(3, s3, s1));
    let (b1, b2) = (node(&sst, "B1"), node(&sst, "B2"));
    assert_eq!(idx.at(1).iter().copied().collect::<Vec<_>>(), [(b1, b2), (b2, b1)]);
    assert_eq!(idx.neighbors_of(2, node(&sst, "R3")), [node(&sst, "R1"), node(&sst, "R2")]);
}

/// Nodes are neighbors iff some pair of leaves below them are, and they differ.
fn brute_force_lift(sst: &Sst, bottom: &BTreeSet<(usize, usize)>, height: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for &p in sst.nodes_at(height) {
        for &q in sst.nodes_at(height) {
            if p == q {
                continue;
            }
            let (lp, lq) = (sst.leaves_under(p), sst.leaves_under(q));
            let hit = lp.iter().any(|&a| lq.iter().any(|&b| {
                bottom.contains(&(sst.node(a).level_index, sst.node(b).level_index))
            }));
            if hit {
                out.insert((p, q));
            }
        }
    }
    out
}

#[test]
fn lift_matches_brute_force_and_is_symmetric() {
    let (kb, bp, sst) = fixture();
    let bottom = neighbor_pairs_bottom(&kb, &bp);
    let idx = lift_neighbors(&sst, &bottom);
    for h in 1..=3 {
        assert_eq!(idx.at(h), &brute_force_lift(&sst, &bottom, h), "height {h}");
        assert!(idx.at(h).iter().all(|&(a, b)| idx.are_neighbors(h, b, a)));
    }
}

#[test]
fn one_parent_means_no_lifted_pairs() {
    let specific = TOY_SPECIFIC.replace("abstract A B", "abstract A").replace("hpair x2 B", "hpair x2 A").replace("hpair x3 B", "hpair x3 A");
    let kb = kb_of(TOY_GENERAL, &specific);
    let bp = build_bottom(&kb).unwrap();
    let sst = build_sst(&kb, &bp).unwrap();
    let idx = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
    assert_eq!(sst.nodes_at(1).len(), 1);
    assert!(idx.at(1).is_empty());
    let h = build_hierarchy(&bp, sst, idx, &quick()).unwrap();
    assert_eq!(h.levels.len(), 1);
    assert_eq!(h.levels[0].actions.len(), 0);
}

fn section_action(sst: &Sst, bottom: &Level, pairs: &BTreeSet<(usize, usize)>, from: &str, to: &str) -> LocalModel {
    let spec = LocalSpec {
        kind: LocalKind::AbstractAction,
        core: sst.children(node(sst, from)).to_vec(),
        goals: sst.children(node(sst, to)).iter().copied().collect(),
        with_extra: true,
        with_help: false,
        reward: 100.0,
    };
    build_local_model(bottom, pairs, &spec).unwrap()
}

fn bottom_level(bp: &BottomPomdp, sst: &Sst) -> Level {
    Level { height: sst.depth(), nodes: sst.nodes_at(sst.depth()).to_vec(), pomdp: bp.pomdp.clone(), actions: Vec::new() }
}

#[test]
fn section_action_state_space() {
    let (kb, bp, sst) = fixture();
    let idx = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
    let bottom = bottom_level(&bp, &sst);
    let m = section_action(&sst, &bottom, idx.at(4), "S1", "S2");
    assert_eq!(m.pomdp.states, ["C1", "C2", "C3", "C4", "C5", "extra", "absb_g", "absb_ng"]);
    assert_eq!(m.pomdp.actions, ["up", "down", "left", "right", "terminate"]);
    assert_eq!(m.pomdp.observations.last().unwrap(), "extra");
    assert!(m.pomdp.row_violations(1e-9).is_empty());
    assert!(m.pomdp.reward_gaps().is_empty());
}

#[test]
fn section_action_dynamics_and_rewards() {
    let (kb, bp, sst) = fixture();
    let idx = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
    let bottom = bottom_level(&bp, &sst);
    let m = section_action(&sst, &bottom, idx.at(4), "S1", "S2");
    let p = &m.pomdp;
    let s = |l: &str| p.state_index(l).unwrap();
    let a = |l: &str| p.action_index(l).unwrap();
    let t = a("terminate");
    assert_eq!(p.transition_prob(s("C3"), t, s("absb_g")), 1.0);
    assert_eq!(p.transition_prob(s("C5"), t, s("absb_ng")), 1.0);
    assert_eq!(p.transition_prob(s("extra"), t, s("absb_ng")), 1.0);
    assert_eq!(p.transition_prob(s("extra"), a("up"), s("extra")), 1.0);
    for abs in ["absb_g", "absb_ng"] {
        for act in 0..p.n_actions() {
            assert_eq!(p.transition_prob(s(abs), act, s(abs)), 1.0);
        }
    }
    assert_eq!(p.reward(s("C1"), t, s("absb_ng")), Some(-100.0));
    assert_eq!(p.reward(s("C3"), t, s("absb_g")), Some(100.0));
    assert_eq!(p.reward(s("C5"), t, s("absb_ng")), Some(100.0));
    assert_eq!(p.reward(s("absb_g"), t, s("absb_g")), Some(100.0));
    assert_eq!(p.reward(s("C2"), a("right"), s("C5")), Some(-100.0));
    assert_eq!(p.reward(s("C2"), a("up"), s("C4")), Some(-1.0));
    assert_eq!(p.reward(s("C4"), a("up"), s("extra")), Some(-100.0));
    assert_eq!(p.reward(s("extra"), a("left"), s("extra")), Some(-100.0));
    // Observation rows.
    let none = p.observation_index("none").unwrap();
    for st in 0..p.n_states() {
        assert_eq!(p.observation_prob(st, t, none), 1.0);
    }
    assert_eq!(p.observation_prob(s("extra"), a("up"), p.observation_index("extra").unwrap()), 1.0);
    assert_eq!(p.observation_prob(s("absb_g"), a("up"), none), 1.0);
}

#[test]
fn leaked_mass_is_row_complement() {
    let (kb, bp, sst) = fixture();
    let idx = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
    let bottom = bottom_level(&bp, &sst);
    for &(i, j) in idx.at(3) {
        let m = section_action(&sst, &bottom, idx.at(4), &sst.node(i).label, &sst.node(j).label);
        let extra = m.extra.unwrap();
        let local: BTreeSet<usize> = m.nodes.iter().map(|&n| bottom.position(n).unwrap()).collect();
        for (k, &n) in m.nodes.iter().enumerate() {
            let ls = bottom.position(n).unwrap();
            for (a, la) in m.lower_action.iter().enumerate() {
                let Some(la) = la else { continue };
                let outside: f64 = (0..bp.pomdp.n_states())
                    .filter(|t| !local.contains(t))
                    .map(|t| bp.pomdp.transition_prob(ls, *la, t))
                    .sum();
                assert!((m.pomdp.transition_prob(k, a, extra) - outside).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn degenerate_local_space_is_an_error() {
    let mut b = PomdpBuilder::new(vec!["p".into(), "q".into()], vec!["wait".into()], vec!["o".into()]);
    for s in 0..2 {
        b.add_transition(s, 0, s, 1.0);
        b.add_observation(s, 0, 0, 1.0);
    }
    let level = Level { height: 1, nodes: vec![1, 2], pomdp: b.build().unwrap(), actions: Vec::new() };
    let spec = LocalSpec {
        kind: LocalKind::AbstractAction,
        core: vec![1],
        goals: BTreeSet::from([2]),
        with_extra: true,
        with_help: false,
        reward: 100.0,
    };
    let pairs = BTreeSet::from([(1, 2), (2, 1)]);
    let err = build_local_model(&level, &pairs, &spec).unwrap_err();
    assert!(err.to_string().contains("degenerate abstract action"));
}

#[test]
fn fixture_hierarchy_levels() {
    let (kb, _, _) = fixture();
    let h = Hierarchy::from_kb(&kb, &quick()).unwrap();
    assert_eq!(h.levels.len(), 3);
    assert_eq!(h.levels.iter().map(|l| l.height).collect::<Vec<_>>(), [3, 2, 1]);
    for height in 1..=3 {
        let level = h.level(height);
        assert_eq!(level.actions.len(), h.neighbors.at(height).len());
        let p = &level.pomdp;
        assert!(p.row_violations(1e-9).is_empty());
        for (a, aa) in level.actions.iter().enumerate() {
            assert!((aa.outcome.row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(aa.model.pomdp.row_violations(1e-9).is_empty());
            assert!(aa.model.pomdp.reward_gaps().is_empty());
            assert!(aa.model.pomdp.actions.iter().any(|x| x == "terminate"));
            for (k, &n) in level.nodes.iter().enumerate() {
                if n != aa.source {
                    assert_eq!(p.transition_prob(k, a, k), 1.0);
                }
                assert_eq!(p.observation_prob(k, a, k), 1.0);
            }
        }
    }
}

#[test]
fn hierarchy_is_deterministic_and_bundles_round_trip() {
    let (kb, _, _) = fixture();
    let a = Hierarchy::from_kb(&kb, &quick()).unwrap();
    let mut b = Hierarchy::from_kb(&kb, &HierarchyParams { execution: Execution::Sequential, ..quick() }).unwrap();
    b.params.execution = a.params.execution;
    assert_eq!(a, b);
    let bundle = Bundle { general: GENERAL.into(), specific: SPECIFIC.into(), hierarchy: a };
    let text = bundle.to_text();
    let back = Bundle::from_text(&text).unwrap();
    assert_eq!(back, bundle);
    assert_eq!(back.to_text(), text);
}

#[test]
fn zero_simulations_is_an_error() {
    let (kb, _, _) = fixture();
    let params = HierarchyParams { simulations: 0, ..quick() };
    assert_eq!(Hierarchy::from_kb(&kb, &params).unwrap_err(), HierarchyError::ZeroSimulations);
}

fn toy() -> (BottomPomdp, Sst, NeighborIndex) {
    let kb = kb_of(TOY_GENERAL, TOY_SPECIFIC);
    let bp = build_bottom(&kb).unwrap();
    let sst = build_sst(&kb, &bp).unwrap();
    let idx = lift_neighbors(&sst, &neighbor_pairs_bottom(&kb, &bp));
    (bp, sst, idx)
}

#[test]
fn noiseless_corridor_lands_on_target() {
    let general = TOY_GENERAL
        .replace("here 0.2", "here 0")
        .replace("left_of 0.8", "left_of 1")
        .replace("right_of 0.8", "right_of 1")
        .replace("see_here 0.8", "see_here 1")
        .replace("obs left rel see_left 0.1\n", "")
        .replace("obs left rel see_right 0.1\n", "")
        .replace("obs right rel see_left 0.1\n", "")
        .replace("obs right rel see_right 0.1\n", "")
        .replace("trans left rel here 0\n", "")
        .replace("trans right rel here 0\n", "");
    let kb = kb_of(&general, TOY_SPECIFIC);
    let h = Hierarchy::from_kb(&kb, &quick()).unwrap();
    let (a, b) = (h.sst.find("A").unwrap(), h.sst.find("B").unwrap());
    let ab = h.levels[0].actions.iter().find(|x| x.source == a).unwrap();
    assert_eq!(ab.outcome.row, vec![(a, 0.0), (b, 1.0)]);
    assert_eq!(ab.outcome.truncated, 0);
}

/// Exact distribution of the final parent by enumerating (true state, belief)
/// pairs step by step, merging identical beliefs and dropping branches
/// below 1e-10.
fn enumerate_outcome(aa: &AbstractAction, lower: &Level, sst: &Sst, max_steps: usize) -> BTreeMap<usize, f64> {
    let m = &aa.model;
    let n_loc = m.pomdp.n_states();
    let mut frontier: BTreeMap<(usize, Vec<u64>), f64> = BTreeMap::new();
    let start_p = 1.0 / m.nodes.len() as f64;
    for (k, &n) in m.nodes.iter().enumerate() {
        let b = Belief::delta(n_loc, k);
        let key = (lower.position(n).unwrap(), b.probs().iter().map(|x| x.to_bits()).collect());
        *frontier.entry(key).or_default() += start_p;
    }
    let mut ended: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pruned = 0.0;
    let parent = |s: usize| sst.ancestor_at(lower.nodes[s], lower.height - 1);
    for _ in 0..max_steps {
        let mut next: BTreeMap<(usize, Vec<u64>), f64> = BTreeMap::new();
        for ((s, bits), p) in frontier {
            if p < 1e-10 {
                pruned += p;
                continue;
            }
            let b = Belief::new(bits.iter().map(|&x| f64::from_bits(x)).collect()).unwrap();
            let (a, _) = best_action(&aa.policy, &b).unwrap();
            let Some(la) = m.lower_action[a] else {
                *ended.entry(parent(s)).or_default() += p;
                continue;
            };
            for s2 in 0..lower.pomdp.n_states() {
                let pt = lower.pomdp.transition_prob(s, la, s2);
                if pt == 0.0 {
                    continue;
                }
                for o in 0..lower.pomdp.n_observations() {
                    let po = lower.pomdp.observation_prob(s2, la, o);
                    if po == 0.0 {
                        continue;
                    }
                    let o_loc = m.map_observation(o).unwrap();
                    let nb = belief_update(&m.pomdp, &b, a, o_loc).unwrap().belief;
                    let key = (s2, nb.probs().iter().map(|x| x.to_bits()).collect());
                    *next.entry(key).or_default() += p * pt * po;
                }
            }
        }
        frontier = next;
    }
    for ((s, _), p) in frontier {
        *ended.entry(parent(s)).or_default() += p;
    }
    assert!(pruned < 1e-3, "pruned {pruned}");
    ended
}

#[test]
fn outcome_row_matches_enumeration() {
    let (bp, sst, idx) = toy();
    let params = HierarchyParams { simulations: 10_000, ..quick() };
    let h = build_hierarchy(&bp, sst, idx, &params).unwrap();
    for aa in &h.levels[0].actions {
        let exact = enumerate_outcome(aa, &h.bottom, &h.sst, params.max_steps_factor * aa.model.pomdp.n_states());
        for &(node, p) in &aa.outcome.row {
            let e = exact.get(&node).copied().unwrap_or(0.0);
            assert!((p - e).abs() <= 0.03, "{}: {p} vs {e}", h.sst.node(node).label);
        }
    }
}

#[test]
fn same_seed_same_row() {
    let (bp, sst, idx) = toy();
    let h = build_hierarchy(&bp, sst, idx, &quick()).unwrap();
    let aa = &h.levels[0].actions[0];
    let domain: Vec<usize> = aa.outcome.row.iter().map(|e| e.0).collect();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        estimate_outcome_row(&aa.model, &aa.policy, &h.bottom, &h.sst, &domain, 100, 120, &mut rng).unwrap()
    };
    assert_eq!(run(3), run(3));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = estimate_outcome_row(&aa.model, &aa.policy, &h.bottom, &h.sst, &domain, 0, 120, &mut rng);
    assert_eq!(err.unwrap_err(), HierarchyError::ZeroSimulations);
}

proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
    #[test]
    fn corridor_hierarchies_are_well_formed(n_sections in 2usize..5, width in 1usize..4) {
        let n = n_sections * width;
        let cells: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let sections: Vec<String> = (0..n_sections).map(|i| format!("S{i}")).collect();
        let mut spec = format!(
            "values pos {}\nobservations pos {}\nabstract {}\n",
            cells.join(" "), cells.join(" "), sections.join(" ")
        );
        for i in 0..n {
            spec += &format!("pair here x{i} x{i}\npair see_here x{i} x{i}\nhpair x{i} S{}\n", i / width);
            if i > 0 {
                spec += &format!("pair left_of x{i} x{}\npair see_left x{i} x{}\n", i - 1, i - 1);
            }
            if i + 1 < n {
                spec += &format!("pair right_of x{i} x{}\npair see_right x{i} x{}\n", i + 1, i + 1);
            }
        }
        spec += &format!("pair wall_left x0 x0\npair wall_right x{} x{}\n", n - 1, n - 1);
        let kb = kb_of(TOY_GENERAL, &spec);
        let params = HierarchyParams {
            simulations: 20,
            solver: SolverParams { belief_points: 16, expansions: 1, backup_sweeps: 20, ..SolverParams::default() },
            ..HierarchyParams::default()
        };
        let h = Hierarchy::from_kb(&kb, &params).unwrap();
        prop_assert_eq!(h.levels[0].actions.len(), 2 * (n_sections - 1));
        for aa in h.abstract_actions() {
            prop_assert!(aa.model.pomdp.row_violations(1e-9).is_empty());
            prop_assert!(aa.model.pomdp.reward_gaps().is_empty());
            prop_assert!((aa.outcome.row.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert!(h.levels[0].pomdp.row_violations(1e-9).is_empty());
    }
}

use super::*;
use crate::pomdp::PomdpBuilder;
use proptest::{prop_assert, prop_assert_eq, proptest};

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Exact MDP value iteration; returns Q[s][a].
fn exact_q(p: &Pomdp) -> Vec<Vec<f64>> {
    let (n, na, g) = (p.n_states(), p.n_actions(), p.discount);
    let mut v = vec![0.0; n];
    loop {
        let q: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        p.row(s, a)
                            .iter()
                            .map(|o| o.prob * (o.reward.unwrap_or(0.0) + g * v[o.target]))
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let nv: Vec<f64> = q.iter().map(|r: &Vec<f64>| r.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let delta = nv.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = nv;
        if delta < 1e-12 {
            return q;
        }
    }
}

fn tight() -> SolverParams {
    SolverParams { backup_sweeps: 3000, epsilon: 1e-11, expansions: 0, ..SolverParams::default() }
}

/// 4-cell chain; `right` advances, `left` retreats, the last cell is an
/// absorbing goal paying +100 per step, every other step costs 1.
fn chain4() -> Pomdp {
    let mut b = PomdpBuilder::new(labels("c", 4), vec!["left".into(), "right".into()], labels("c", 4));
    for s in 0..4usize {
        for a in 0..2 {
            let t = if s == 3 { 3 } else if a == 1 { s + 1 } else { s.saturating_sub(1) };
            b.add_transition(s, a, t, 1.0);
            b.set_reward(s, a, t, if s == 3 { 100.0 } else { -1.0 });
            b.add_observation(s, a, s, 1.0);
        }
    }
    b.build().unwrap()
}

fn deltas(n: usize) -> Vec<Belief> {
    (0..n).map(|i| Belief::delta(n, i)).collect()
}

fn greedy_matches_vi(p: &Pomdp, pol: &AlphaVectorPolicy) -> bool {
    let q = exact_q(p);
    (0..p.n_states()).all(|s| {
        let (a, _) = crate::pomdp::best_action(pol, &Belief::delta(p.n_states(), s)).unwrap();
        let max = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        q[s][a] >= max - 1e-6
    })
}

#[test]
fn absorbing_zero_reward_gives_zero_vector() {
    let mut b = PomdpBuilder::new(labels("s", 1), labels("a", 1), labels("o", 1));
    b.add_transition(0, 0, 0, 1.0);
    b.set_reward(0, 0, 0, 0.0);
    b.add_observation(0, 0, 0, 1.0);
    let p = b.build().unwrap();
    let pol = solve(&p, &[Belief::delta(1, 0)], &SolverParams::default()).unwrap();
    assert_eq!(pol.vectors, vec![AlphaVector { action: 0, values: vec![0.0] }]);
}

#[test]
fn chain_greedy_matches_value_iteration() {
    let p = chain4();
    let pol = solve(&p, &deltas(4), &tight()).unwrap();
    assert!(greedy_matches_vi(&p, &pol));
    for s in 0..3 {
        assert_eq!(crate::pomdp::best_action(&pol, &Belief::delta(4, s)).unwrap().0, 1);
    }
}

#[test]
fn goal_value_is_geometric_series() {
    let p = chain4();
    let pol = solve(&p, &deltas(4), &tight()).unwrap();
    let v = pol.value(Belief::delta(4, 3).probs());
    assert!((v - 100.0 / (1.0 - 0.95)).abs() < 1e-6, "{v}");
}

#[test]
fn symmetric_actions_have_equal_values() {
    // Swapping the two states maps action 0 onto action 1.
    let mut b = PomdpBuilder::new(labels("s", 2), labels("a", 2), labels("o", 2));
    for s in 0..2 {
        for a in 0..2 {
            let stay = if s == a { 0.7 } else { 0.4 };
            b.add_transition(s, a, s, stay);
            b.add_transition(s, a, 1 - s, 1.0 - stay);
            b.set_reward(s, a, s, if s == a { 2.0 } else { -1.0 });
            b.set_reward(s, a, 1 - s, 0.5);
            b.add_observation(s, a, s, 0.75);
            b.add_observation(s, a, 1 - s, 0.25);
        }
    }
    let p = b.build().unwrap();
    let params = SolverParams { backup_sweeps: 2000, epsilon: 1e-12, ..SolverParams::default() };
    let pol = solve(&p, &[Belief::uniform(2), Belief::delta(2, 0), Belief::delta(2, 1)], &params).unwrap();
    let u = Belief::uniform(2);
    let q = |a: usize| {
        let pred = p.predict(u.probs(), a);
        let r: f64 = (0..2).map(|s| 0.5 * p.expected_reward(s, a)).sum();
        let lik = p.observation_likelihoods(&pred, a);
        r + p.discount
            * (0..2)
                .filter(|&o| lik[o] > 0.0)
                .map(|o| lik[o] * pol.value(belief_update(&p, &u, a, o).unwrap().belief.probs()))
                .sum::<f64>()
    };
    assert!((q(0) - q(1)).abs() < 1e-9, "{} vs {}", q(0), q(1));
}

#[test]
fn backup_of_zero_vector_with_unit_costs() {
    let mut b = PomdpBuilder::new(labels("s", 3), labels("a", 2), labels("o", 2));
    for s in 0..3 {
        for a in 0..2 {
            b.add_transition(s, a, (s + a) % 3, 0.5);
            b.add_transition(s, a, (s + 1) % 3, 0.5);
            for t in 0..3 {
                b.set_reward(s, a, t, -1.0);
            }
            b.add_observation(s, a, 0, 0.5);
            b.add_observation(s, a, 1, 0.5);
        }
    }
    let p = b.build().unwrap();
    let zero = vec![AlphaVector { action: 0, values: vec![0.0; 3] }];
    let alpha = backup(&p, &zero, &Belief::uniform(3));
    assert_eq!(alpha.values, vec![-1.0; 3]);
}

#[test]
fn backup_at_delta_is_bellman_backup() {
    let p = random_mdp(7, 3, 5);
    let vectors = prune(blind_vectors(&p));
    let v: Vec<f64> = (0..7)
        .map(|s| vectors.iter().map(|a| a.values[s]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for s in 0..7 {
        let alpha = backup(&p, &vectors, &Belief::delta(7, s));
        let bellman = (0..3)
            .map(|a| {
                p.row(s, a)
                    .iter()
                    .map(|o| o.prob * (o.reward.unwrap() + p.discount * v[o.target]))
                    .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((alpha.values[s] - bellman).abs() < 1e-9);
    }
}

fn random_mdp(n: usize, na: usize, seed: u64) -> Pomdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = PomdpBuilder::new(labels("s", n), labels("a", na), labels("s", n));
    for s in 0..n {
        for a in 0..na {
            let targets: Vec<usize> = (0..3).map(|_| rng.gen_range(0..n)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() + 0.05).collect();
            let tot: f64 = w.iter().sum();
            for (t, x) in targets.iter().zip(&w) {
                b.add_transition(s, a, *t, x / tot);
            }
            for t in targets {
                b.set_reward(s, a, t, rng.gen_range(-10.0..10.0));
            }
            b.add_observation(s, a, s, 1.0);
        }
    }
    b.build().unwrap()
}

#[test]
fn random_identity_observation_mdps_match_vi() {
    for seed in 0..10 {
        let p = random_mdp(12, 3, seed);
        let pol = solve(&p, &deltas(12), &tight()).unwrap();
        assert!(greedy_matches_vi(&p, &pol), "seed {seed}");
    }
}

fn det_cycle(n: usize) -> Pomdp {
    let mut b = PomdpBuilder::new(labels("s", n), labels("a", 1), labels("s", n));
    for s in 0..n {
        b.add_transition(s, 0, (s + 1) % n, 1.0);
        b.set_reward(s, 0, (s + 1) % n, -1.0);
        b.add_observation(s, 0, s, 1.0);
    }
    b.build().unwrap()
}

#[test]
fn expand_adds_unique_successor() {
    let p = det_cycle(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = expand_beliefs(&p, &[Belief::delta(3, 0)], 128, &mut rng);
    assert_eq!(out, vec![Belief::delta(3, 0), Belief::delta(3, 1)]);
}

#[test]
fn expand_saturated_set_is_unchanged() {
    let p = det_cycle(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let all = deltas(3);
    assert_eq!(expand_beliefs(&p, &all, 128, &mut rng), all);
}

#[test]
fn expand_noisy_keeps_beliefs_valid() {
    let mut b = PomdpBuilder::new(labels("s", 4), labels("a", 2), labels("o", 4));
    for s in 0..4 {
        for a in 0..2 {
            for t in 0..4 {
                b.add_transition(s, a, t, 0.25);
                b.add_observation(t, a, (t + s) % 4, 0.25);
            }
        }
    }
    let p = b.build().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pts = vec![Belief::delta(4, 0)];
    for _ in 0..4 {
        let next = expand_beliefs(&p, &pts, 128, &mut rng);
        assert!(next.len() <= 2 * pts.len());
        pts = next;
    }
    for b in &pts {
        assert!(Belief::new(b.probs().to_vec()).is_ok());
    }
}

#[test]
fn prune_drops_duplicates_and_dominated() {
    let v = |a, x: Vec<f64>| AlphaVector { action: a, values: x };
    let out = prune(vec![v(0, vec![1.0, 0.0]), v(1, vec![1.0, 0.0]), v(0, vec![0.5, -1.0]), v(1, vec![0.0, 2.0])]);
    assert_eq!(out, vec![v(0, vec![1.0, 0.0]), v(1, vec![0.0, 2.0])]);
}

#[test]
fn sequential_and_parallel_agree() {
    let p = random_mdp(10, 3, 77);
    let seq = SolverParams { execution: Execution::Sequential, ..SolverParams::default() };
    let par = SolverParams { execution: Execution::Parallel, ..SolverParams::default() };
    let seeds = vec![Belief::uniform(10), Belief::delta(10, 2)];
    assert_eq!(solve(&p, &seeds, &seq).unwrap(), solve(&p, &seeds, &par).unwrap());
}

proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

    #[test]
    fn values_at_points_never_drop(seed in 0u64..1000) {
        let p = random_mdp(6, 2, seed);
        let seeds = vec![Belief::uniform(6), Belief::delta(6, 0), Belief::delta(6, 5)];
        let mut prev = vec![f64::NEG_INFINITY; seeds.len()];
        for sweeps in 1..12 {
            let params = SolverParams { backup_sweeps: sweeps, expansions: 0, epsilon: 1e-12, ..SolverParams::default() };
            let pol = solve(&p, &seeds, &params).unwrap();
            for (b, pv) in seeds.iter().zip(prev.iter_mut()) {
                let v = pol.value(b.probs());
                prop_assert!(v >= *pv - 1e-9);
                *pv = v;
            }
        }
    }

    #[test]
    fn same_seed_same_policy(seed in 0u64..1000) {
        let p = random_mdp(5, 2, seed);
        let params = SolverParams { seed, ..SolverParams::default() };
        let seeds = vec![Belief::uniform(5)];
        prop_assert_eq!(solve(&p, &seeds, &params).unwrap(), solve(&p, &seeds, &params).unwrap());
    }
}

//! Point-based value iteration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::Execution;
use crate::pomdp::{belief_update, sample_step, AlphaVector, AlphaVectorPolicy, Belief, Pomdp, PomdpError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    /// Cap on the belief set size.
    pub belief_points: usize,
    /// Expansion rounds after the initial sweeps.
    pub expansions: usize,
    /// Sweep cap per round.
    pub backup_sweeps: usize,
    /// Stop a round once no point value improves by more than this, in reward units.
    pub epsilon: f64,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            belief_points: 128,
            expansions: 4,
            backup_sweeps: 60,
            epsilon: 0.1,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl SolverParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Lower-bound value function: one vector per action for the policy that
/// repeats that action forever.
pub fn blind_vectors(p: &Pomdp) -> Vec<AlphaVector> {
    let n = p.n_states();
    let gamma = p.discount;
    let floor = p.min_expected_reward().min(0.0) / (1.0 - gamma);
    (0..p.n_actions())
        .map(|a| {
            let mut v = vec![floor; n];
            for _ in 0..5000 {
                let mut delta: f64 = 0.0;
                let next: Vec<f64> = (0..n)
                    .map(|s| {
                        let x = p.expected_reward(s, a)
                            + gamma * p.row(s, a).iter().map(|o| o.prob * v[o.target]).sum::<f64>();
                        delta = delta.max((x - v[s]).abs());
                        x
                    })
                    .collect();
                v = next;
                if delta < 1e-9 {
                    break;
                }
            }
            AlphaVector { action: a, values: v }
        })
        .collect()
}

fn argmax_dot(vectors: &[AlphaVector], sparse: &[(usize, f64)]) -> (usize, f64) {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in vectors.iter().enumerate() {
        let x: f64 = sparse.iter().map(|&(s, w)| w * v.values[s]).sum();
        if x > best_v {
            best = k;
            best_v = x;
        }
    }
    (best, best_v)
}

/// Point-based backup of `vectors` at `b`.
///
/// Observations unreachable from `b` under an action borrow the vector that is
/// best for the predicted belief.
pub fn backup(p: &Pomdp, vectors: &[AlphaVector], b: &Belief) -> AlphaVector {
    let n = p.n_states();
    let gamma = p.discount;
    let support: Vec<(usize, f64)> = b.probs().iter().copied().enumerate().filter(|e| e.1 > 0.0).collect();
    let mut best: Option<(f64, usize, Vec<Option<usize>>, usize)> = None;
    let mut by_obs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p.n_observations()];
    for a in 0..p.n_actions() {
        let mut predicted = vec![0.0; n];
        for &(s, w) in &support {
            for o in p.row(s, a) {
                predicted[o.target] += w * o.prob;
            }
        }
        let pred_sparse: Vec<(usize, f64)> = predicted.iter().copied().enumerate().filter(|e| e.1 > 0.0).collect();
        for list in by_obs.iter_mut() {
            list.clear();
        }
        let mut touched = Vec::new();
        for &(s2, w) in &pred_sparse {
            for &(o, q) in p.obs_row(s2, a) {
                if by_obs[o].is_empty() {
                    touched.push(o);
                }
                by_obs[o].push((s2, w * q));
            }
        }
        let mut chosen = vec![None; p.n_observations()];
        let mut value: f64 = support.iter().map(|&(s, w)| w * p.expected_reward(s, a)).sum();
        touched.sort_unstable();
        for &o in &touched {
            let (k, v) = argmax_dot(vectors, &by_obs[o]);
            chosen[o] = Some(k);
            value += gamma * v;
        }
        let fallback = argmax_dot(vectors, &pred_sparse).0;
        if best.as_ref().is_none_or(|(v, ..)| value > *v) {
            best = Some((value, a, chosen, fallback));
        }
    }
    let (_, a, chosen, fallback) = best.expect("POMDPs have at least one action");
    let future: Vec<f64> = (0..n)
        .map(|s2| {
            p.obs_row(s2, a)
                .iter()
                .map(|&(o, q)| q * vectors[chosen[o].unwrap_or(fallback)].values[s2])
                .sum()
        })
        .collect();
    let values = (0..n)
        .map(|s| p.expected_reward(s, a) + gamma * p.row(s, a).iter().map(|o| o.prob * future[o.target]).sum::<f64>())
        .collect();
    AlphaVector { action: a, values }
}

/// Drops exact duplicates and vectors pointwise dominated by another; keeps order.
pub fn prune(vectors: Vec<AlphaVector>) -> Vec<AlphaVector> {
    let mut kept: Vec<AlphaVector> = Vec::with_capacity(vectors.len());
    for (i, v) in vectors.iter().enumerate() {
        let dominated = vectors.iter().enumerate().any(|(j, w)| {
            j != i && w.dominates(v) && (w.values != v.values || j < i)
        });
        if !dominated {
            kept.push(v.clone());
        }
    }
    kept
}

fn min_l1(set: &[Belief], b: &Belief) -> f64 {
    set.iter().map(|x| x.l1_distance(b)).fold(f64::INFINITY, f64::min)
}

/// One stochastic expansion step: per point, simulate one step per action and
/// keep the successor farthest (L1) from the set, if it is new.
pub fn expand_beliefs<R: Rng + ?Sized>(p: &Pomdp, points: &[Belief], cap: usize, rng: &mut R) -> Vec<Belief> {
    let mut out = points.to_vec();
    for b in points {
        if out.len() >= cap {
            break;
        }
        let mut best: Option<(f64, Belief)> = None;
        for a in 0..p.n_actions() {
            let u: f64 = rng.gen();
            let s = sample_index(b.probs(), u);
            let Ok((_, o)) = sample_step(p, s, a, rng) else { continue };
            let Ok(up) = belief_update(p, b, a, o) else { continue };
            let d = min_l1(&out, &up.belief);
            if d > 1e-12 && best.as_ref().is_none_or(|(bd, _)| d > *bd) {
                best = Some((d, up.belief));
            }
        }
        if let Some((_, nb)) = best {
            out.push(nb);
        }
    }
    out
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Diagnostics from one solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub points: usize,
    pub sweeps: usize,
    pub vectors: usize,
    pub final_residual: f64,
}

pub fn solve(p: &Pomdp, seeds: &[Belief], params: &SolverParams) -> Result<AlphaVectorPolicy, PomdpError> {
    solve_with_stats(p, seeds, params).map(|(pol, _)| pol)
}

pub fn solve_with_stats(
    p: &Pomdp,
    seeds: &[Belief],
    params: &SolverParams,
) -> Result<(AlphaVectorPolicy, SolveStats), PomdpError> {
    if seeds.is_empty() {
        return Err(PomdpError::InvalidBelief("no seed beliefs".into()));
    }
    let mut points: Vec<Belief> = Vec::new();
    for b in seeds {
        if b.len() != p.n_states() {
            return Err(PomdpError::DimensionMismatch { expected: p.n_states(), got: b.len() });
        }
        if points.len() < params.belief_points.max(1) && !points.contains(b) {
            points.push(b.clone());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut vectors = prune(blind_vectors(p));
    let mut stats = SolveStats::default();
    for round in 0..=params.expansions {
        let mut values: Vec<f64> = points.iter().map(|b| value_at(&vectors, b)).collect();
        for _ in 0..params.backup_sweeps.max(1) {
            let current = &vectors;
            let fresh: Vec<AlphaVector> = params.execution.map(&points, |b| backup(p, current, b));
            let mut next = Vec::with_capacity(points.len());
            let mut residual: f64 = 0.0;
            for ((b, alpha), old) in points.iter().zip(fresh).zip(values.iter_mut()) {
                let v = alpha.dot(b.probs());
                if v >= *old {
                    residual = residual.max(v - *old);
                    *old = v;
                    next.push(alpha);
                } else {
                    // Keep the value at this point from dropping.
                    next.push(vectors[best_index(&vectors, b)].clone());
                }
            }
            vectors = prune(next);
            stats.sweeps += 1;
            stats.final_residual = residual;
            if residual < params.epsilon {
                break;
            }
        }
        if round < params.expansions && points.len() < params.belief_points {
            let grown = expand_beliefs(p, &points, params.belief_points, &mut rng);
            if grown.len() == points.len() {
                break;
            }
            points = grown;
        }
    }
    stats.points = points.len();
    stats.vectors = vectors.len();
    let pol = AlphaVectorPolicy::new(vectors, p.states.clone(), p.actions.clone())?;
    Ok((pol, stats))
}

fn best_index(vectors: &[AlphaVector], b: &Belief) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in vectors.iter().enumerate() {
        let x = v.dot(b.probs());
        if x > best_v {
            best = i;
            best_v = x;
        }
    }
    best
}

fn value_at(vectors: &[AlphaVector], b: &Belief) -> f64 {
    vectors[best_index(vectors, b)].dot(b.probs())
}

#[cfg(test)]
mod tests;

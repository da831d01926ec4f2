//! Discrete POMDPs with sparse rows, beliefs, alpha-vector policies and a
//! seeded simulator.

mod text;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use text::TextError;

/// Row sums must hit 1 within this tolerance.
pub const ROW_TOLERANCE: f64 = 1e-9;
/// Normalizers below this mark an observation as inconsistent with the belief.
pub const MIN_NORMALIZER: f64 = 1e-12;
pub const DEFAULT_DISCOUNT: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PomdpError {
    #[error("{what} index {index} out of range (len {len})")]
    InvalidIndex { what: &'static str, index: usize, len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("missing {kind} row for ({state}, {action})")]
    MissingRow { kind: &'static str, state: String, action: String },
    #[error("{kind} row for ({state}, {action}) sums to {sum}")]
    RowSum { kind: &'static str, state: String, action: String, sum: f64 },
    #[error("invalid belief: {0}")]
    InvalidBelief(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

fn check_index(what: &'static str, index: usize, len: usize) -> Result<(), PomdpError> {
    if index < len {
        Ok(())
    } else {
        Err(PomdpError::InvalidIndex { what, index, len })
    }
}

/// One entry of a transition row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub target: usize,
    pub prob: f64,
    /// `R(s, a, target)`; `None` when the model carries no reward for the triple.
    pub reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pomdp {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
    pub discount: f64,
    /// `[action][state]`, sorted by target.
    transitions: Vec<Vec<Vec<Outcome>>>,
    /// `[action][reached state]`, sorted by observation.
    observation_fn: Vec<Vec<Vec<(usize, f64)>>>,
    /// `[action][state]`: `Σ_s' Φ(s,a,s') R(s,a,s')`.
    expected_reward: Vec<Vec<f64>>,
}

impl Pomdp {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.actions.iter().position(|s| s == label)
    }

    pub fn observation_index(&self, label: &str) -> Option<usize> {
        self.observations.iter().position(|s| s == label)
    }

    /// Transition row `Φ(s, a, ·)`.
    pub fn row(&self, s: usize, a: usize) -> &[Outcome] {
        &self.transitions[a][s]
    }

    /// Observation row `Ω(s', a, ·)`.
    pub fn obs_row(&self, s2: usize, a: usize) -> &[(usize, f64)] {
        &self.observation_fn[a][s2]
    }

    pub fn transition_prob(&self, s: usize, a: usize, s2: usize) -> f64 {
        let row = self.row(s, a);
        row.binary_search_by_key(&s2, |o| o.target).map_or(0.0, |i| row[i].prob)
    }

    pub fn observation_prob(&self, s2: usize, a: usize, o: usize) -> f64 {
        let row = self.obs_row(s2, a);
        row.binary_search_by_key(&o, |e| e.0).map_or(0.0, |i| row[i].1)
    }

    pub fn reward(&self, s: usize, a: usize, s2: usize) -> Option<f64> {
        let row = self.row(s, a);
        row.binary_search_by_key(&s2, |o| o.target).ok().and_then(|i| row[i].reward)
    }

    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.expected_reward[a][s]
    }

    /// Row-sum violations of Φ and Ω beyond `tol`.
    pub fn row_violations(&self, tol: f64) -> Vec<String> {
        let mut out = Vec::new();
        for a in 0..self.n_actions() {
            for s in 0..self.n_states() {
                let t: f64 = self.row(s, a).iter().map(|o| o.prob).sum();
                if (t - 1.0).abs() > tol {
                    out.push(format!("Φ({}, {}) sums to {t}", self.states[s], self.actions[a]));
                }
                let o: f64 = self.obs_row(s, a).iter().map(|e| e.1).sum();
                if (o - 1.0).abs() > tol {
                    out.push(format!("Ω({}, {}) sums to {o}", self.states[s], self.actions[a]));
                }
            }
        }
        out
    }

    /// Triples with positive transition probability but no reward.
    pub fn reward_gaps(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.n_actions() {
            for s in 0..self.n_states() {
                for o in self.row(s, a) {
                    if o.prob > 0.0 && o.reward.is_none() {
                        out.push((s, a, o.target));
                    }
                }
            }
        }
        out
    }

    pub fn min_expected_reward(&self) -> f64 {
        self.expected_reward
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Predicted belief `Σ_s Φ(s,a,s') b(s)`.
    pub fn predict(&self, b: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_states()];
        for (s, &p) in b.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for o in self.row(s, a) {
                out[o.target] += p * o.prob;
            }
        }
        out
    }

    /// `P(o | b, a)` for every observation, given the predicted belief.
    pub fn observation_likelihoods(&self, predicted: &[f64], a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_observations()];
        for (s2, &p) in predicted.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for &(o, q) in self.obs_row(s2, a) {
                out[o] += p * q;
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        text::pomdp_to_text(self)
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        text::pomdp_from_text(text)
    }
}

/// Accumulates sparse entries and validates them into a [`Pomdp`].
#[derive(Clone, Debug)]
pub struct PomdpBuilder {
    states: Vec<String>,
    actions: Vec<String>,
    observations: Vec<String>,
    discount: f64,
    transitions: BTreeMap<(usize, usize), BTreeMap<usize, (f64, Option<f64>)>>,
    observation_fn: BTreeMap<(usize, usize), BTreeMap<usize, f64>>,
}

impl PomdpBuilder {
    pub fn new(states: Vec<String>, actions: Vec<String>, observations: Vec<String>) -> Self {
        Self {
            states,
            actions,
            observations,
            discount: DEFAULT_DISCOUNT,
            transitions: BTreeMap::new(),
            observation_fn: BTreeMap::new(),
        }
    }

    pub fn discount(mut self, discount: f64) -> Self {
        self.discount = discount;
        self
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Adds `p` to `Φ(s, a, s2)`.
    pub fn add_transition(&mut self, s: usize, a: usize, s2: usize, p: f64) {
        let e = self.transitions.entry((a, s)).or_default().entry(s2).or_insert((0.0, None));
        e.0 += p;
    }

    /// Sets `R(s, a, s2)`. Has no effect on triples without transition mass.
    pub fn set_reward(&mut self, s: usize, a: usize, s2: usize, r: f64) {
        if let Some(e) = self.transitions.get_mut(&(a, s)).and_then(|row| row.get_mut(&s2)) {
            e.1 = Some(r);
        }
    }

    /// Adds `p` to `Ω(s2, a, o)`.
    pub fn add_observation(&mut self, s2: usize, a: usize, o: usize, p: f64) {
        *self.observation_fn.entry((a, s2)).or_default().entry(o).or_insert(0.0) += p;
    }

    pub fn build(self) -> Result<Pomdp, PomdpError> {
        let (ns, na, no) = (self.states.len(), self.actions.len(), self.observations.len());
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(PomdpError::InvalidPolicy(format!("discount {} outside (0, 1)", self.discount)));
        }
        let mut transitions = vec![vec![Vec::new(); ns]; na];
        for ((a, s), row) in self.transitions {
            check_index("action", a, na)?;
            check_index("state", s, ns)?;
            let mut out = Vec::with_capacity(row.len());
            for (t, (p, r)) in row {
                check_index("state", t, ns)?;
                if p > 0.0 {
                    out.push(Outcome { target: t, prob: p, reward: r });
                }
            }
            transitions[a][s] = out;
        }
        let mut observation_fn = vec![vec![Vec::new(); ns]; na];
        for ((a, s2), row) in self.observation_fn {
            check_index("action", a, na)?;
            check_index("state", s2, ns)?;
            let mut out = Vec::with_capacity(row.len());
            for (o, p) in row {
                check_index("observation", o, no)?;
                if p > 0.0 {
                    out.push((o, p));
                }
            }
            observation_fn[a][s2] = out;
        }
        for a in 0..na {
            for s in 0..ns {
                let label = |kind| PomdpError::MissingRow {
                    kind,
                    state: self.states[s].clone(),
                    action: self.actions[a].clone(),
                };
                let sum = |kind, v: f64| PomdpError::RowSum {
                    kind,
                    state: self.states[s].clone(),
                    action: self.actions[a].clone(),
                    sum: v,
                };
                if transitions[a][s].is_empty() {
                    return Err(label("transition"));
                }
                let t: f64 = transitions[a][s].iter().map(|o: &Outcome| o.prob).sum();
                if (t - 1.0).abs() > ROW_TOLERANCE {
                    return Err(sum("transition", t));
                }
                if observation_fn[a][s].is_empty() {
                    return Err(label("observation"));
                }
                let o: f64 = observation_fn[a][s].iter().map(|e: &(usize, f64)| e.1).sum();
                if (o - 1.0).abs() > ROW_TOLERANCE {
                    return Err(sum("observation", o));
                }
            }
        }
        let expected_reward = transitions
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| row.iter().map(|o| o.prob * o.reward.unwrap_or(0.0)).sum())
                    .collect()
            })
            .collect();
        Ok(Pomdp {
            states: self.states,
            actions: self.actions,
            observations: self.observations,
            discount: self.discount,
            transitions,
            observation_fn,
            expected_reward,
        })
    }
}

/// Probability distribution over the states of one POMDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief(Vec<f64>);

impl Belief {
    pub fn new(probs: Vec<f64>) -> Result<Self, PomdpError> {
        if probs.is_empty() {
            return Err(PomdpError::InvalidBelief("empty".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(PomdpError::InvalidBelief(format!("entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(PomdpError::InvalidBelief(format!("sums to {sum}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes a nonnegative vector with positive mass.
    pub fn normalized(mut probs: Vec<f64>) -> Result<Self, PomdpError> {
        let sum: f64 = probs.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(PomdpError::InvalidBelief(format!("cannot normalize mass {sum}")));
        }
        for p in &mut probs {
            *p /= sum;
        }
        Self::new(probs)
    }

    pub fn delta(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_distance(&self, other: &Belief) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Index of the most likely state; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Result of a Bayes filter step.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefUpdate {
    pub belief: Belief,
    /// The observation had (numerically) zero likelihood; `belief` is the prediction only.
    pub inconsistent: bool,
}

pub fn belief_update(p: &Pomdp, b: &Belief, a: usize, o: usize) -> Result<BeliefUpdate, PomdpError> {
    check_index("action", a, p.n_actions())?;
    check_index("observation", o, p.n_observations())?;
    if b.len() != p.n_states() {
        return Err(PomdpError::DimensionMismatch { expected: p.n_states(), got: b.len() });
    }
    let predicted = p.predict(b.probs(), a);
    let mut post: Vec<f64> = predicted
        .iter()
        .enumerate()
        .map(|(s2, &q)| if q == 0.0 { 0.0 } else { q * p.observation_prob(s2, a, o) })
        .collect();
    let norm: f64 = post.iter().sum();
    if norm < MIN_NORMALIZER {
        let belief = Belief::normalized(predicted)?;
        return Ok(BeliefUpdate { belief, inconsistent: true });
    }
    for x in &mut post {
        *x /= norm;
    }
    Ok(BeliefUpdate { belief: Belief(post), inconsistent: false })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub action: usize,
    pub values: Vec<f64>,
}

impl AlphaVector {
    pub fn dot(&self, b: &[f64]) -> f64 {
        self.values.iter().zip(b).map(|(v, p)| v * p).sum()
    }

    /// Pointwise `≥` everywhere.
    pub fn dominates(&self, other: &AlphaVector) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a >= b)
    }
}

/// Piecewise-linear value function; the action of the maximizing vector is the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaVectorPolicy {
    pub vectors: Vec<AlphaVector>,
    pub state_labels: Vec<String>,
    pub action_labels: Vec<String>,
}

impl AlphaVectorPolicy {
    pub fn new(
        vectors: Vec<AlphaVector>,
        state_labels: Vec<String>,
        action_labels: Vec<String>,
    ) -> Result<Self, PomdpError> {
        if vectors.is_empty() {
            return Err(PomdpError::InvalidPolicy("no vectors".into()));
        }
        for v in &vectors {
            if v.values.len() != state_labels.len() {
                return Err(PomdpError::DimensionMismatch { expected: state_labels.len(), got: v.values.len() });
            }
            check_index("action", v.action, action_labels.len())?;
        }
        Ok(Self { vectors, state_labels, action_labels })
    }

    pub fn n_states(&self) -> usize {
        self.state_labels.len()
    }

    /// Index of the maximizing vector; ties go to the lowest index.
    pub fn best_vector(&self, b: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, v) in self.vectors.iter().enumerate() {
            let x = v.dot(b);
            if x > best_v {
                best = i;
                best_v = x;
            }
        }
        best
    }

    pub fn value(&self, b: &[f64]) -> f64 {
        self.vectors[self.best_vector(b)].dot(b)
    }

    pub fn to_text(&self) -> String {
        text::policy_to_text(self)
    }

    pub fn from_text(text: &str) -> Result<Self, TextError> {
        text::policy_from_text(text)
    }
}

/// `(action, value)` of the vector maximizing `⟨α, b⟩`.
pub fn best_action(pol: &AlphaVectorPolicy, b: &Belief) -> Result<(usize, f64), PomdpError> {
    if b.len() != pol.n_states() {
        return Err(PomdpError::DimensionMismatch { expected: pol.n_states(), got: b.len() });
    }
    let i = pol.best_vector(b.probs());
    Ok((pol.vectors[i].action, pol.vectors[i].dot(b.probs())))
}

fn sample_row<T>(row: &[T], prob: impl Fn(&T) -> f64, u: f64) -> Option<&T> {
    let mut acc = 0.0;
    let mut last = None;
    for e in row {
        let p = prob(e);
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(e);
        if u < acc {
            return last;
        }
    }
    last
}

/// Samples `s' ~ Φ(s,a,·)` then `o ~ Ω(s',a,·)`, using exactly two draws.
pub fn sample_step<R: Rng + ?Sized>(p: &Pomdp, s: usize, a: usize, rng: &mut R) -> Result<(usize, usize), PomdpError> {
    check_index("state", s, p.n_states())?;
    check_index("action", a, p.n_actions())?;
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let missing = |kind, st: usize| PomdpError::MissingRow {
        kind,
        state: p.states[st].clone(),
        action: p.actions[a].clone(),
    };
    let s2 = sample_row(p.row(s, a), |o| o.prob, u1).ok_or_else(|| missing("transition", s))?.target;
    let o = sample_row(p.obs_row(s2, a), |e| e.1, u2).ok_or_else(|| missing("observation", s2))?.0;
    Ok((s2, o))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    /// State the action was taken from.
    pub state: usize,
    pub action: usize,
    pub observation: usize,
    /// Belief after the update.
    pub belief: Belief,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub final_state: usize,
    pub final_belief: Belief,
    /// Action that satisfied the stop predicate, if any.
    pub stop_action: Option<usize>,
    pub truncated: bool,
}

/// Runs the greedy policy from `s0`/`b0` until `stop(action)` or `max_steps` steps.
pub fn simulate_policy<R: Rng + ?Sized>(
    p: &Pomdp,
    pol: &AlphaVectorPolicy,
    s0: usize,
    b0: &Belief,
    stop: impl Fn(usize) -> bool,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trace, PomdpError> {
    check_index("state", s0, p.n_states())?;
    let mut s = s0;
    let mut b = b0.clone();
    let mut steps = Vec::new();
    loop {
        let (a, _) = best_action(pol, &b)?;
        if stop(a) {
            return Ok(Trace { steps, final_state: s, final_belief: b, stop_action: Some(a), truncated: false });
        }
        if steps.len() >= max_steps {
            return Ok(Trace { steps, final_state: s, final_belief: b, stop_action: None, truncated: true });
        }
        let (s2, o) = sample_step(p, s, a, rng)?;
        b = belief_update(p, &b, a, o)?.belief;
        steps.push(TraceStep { state: s, action: a, observation: o, belief: b.clone() });
        s = s2;
    }
}

use super::ExecError;
use crate::hierarchy::{LocalModel, Sst};
use crate::pomdp::{belief_update, AlphaVector, AlphaVectorPolicy, Belief, Pomdp, PomdpError, MIN_NORMALIZER};

/// Probability of every SST node; internal nodes hold the sum of their children.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalBelief {
    probs: Vec<f64>,
    /// Set when the last update saw an observation the model deems impossible.
    pub inconsistent: bool,
}

impl GlobalBelief {
    pub fn build(b0: &Belief, sst: &Sst) -> Result<Self, ExecError> {
        let leaves = sst.nodes_at(sst.depth());
        if b0.len() != leaves.len() {
            return Err(PomdpError::DimensionMismatch { expected: leaves.len(), got: b0.len() }.into());
        }
        let b0 = Belief::new(b0.probs().to_vec())?;
        let mut gb = Self { probs: vec![0.0; sst.nodes.len()], inconsistent: false };
        gb.set_leaves(b0.probs(), sst);
        Ok(gb)
    }

    fn set_leaves(&mut self, leaf_probs: &[f64], sst: &Sst) {
        let depth = sst.depth();
        for (&n, &p) in sst.nodes_at(depth).iter().zip(leaf_probs) {
            self.probs[n] = p;
        }
        for h in (0..depth).rev() {
            for &n in sst.nodes_at(h) {
                self.probs[n] = sst.children(n).iter().map(|&c| self.probs[c]).sum();
            }
        }
    }

    pub fn prob(&self, node: usize) -> f64 {
        self.probs[node]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Belief over the bottom states.
    pub fn leaf_belief(&self, sst: &Sst) -> Belief {
        Belief::normalized(sst.nodes_at(sst.depth()).iter().map(|&n| self.probs[n]).collect())
            .expect("leaf probabilities form a distribution")
    }

    /// Bayes update of the leaves after concrete action `a` and observation `z`, then re-aggregation.
    pub fn update(&mut self, bp: &Pomdp, sst: &Sst, a: usize, z: usize) -> Result<(), ExecError> {
        let up = belief_update(bp, &self.leaf_belief(sst), a, z)?;
        self.inconsistent = up.inconsistent;
        self.set_leaves(up.belief.probs(), sst);
        Ok(())
    }

    /// Largest violation of the parent-sum rule and of the root being 1.
    pub fn max_violation(&self, sst: &Sst) -> f64 {
        let mut worst = (self.probs[Sst::ROOT] - 1.0).abs();
        for (n, node) in sst.nodes.iter().enumerate() {
            if !node.children.is_empty() {
                let sum: f64 = node.children.iter().map(|&c| self.probs[c]).sum();
                worst = worst.max((self.probs[n] - sum).abs());
            }
        }
        worst
    }
}

fn outside_probs(model: &LocalModel, gb: &GlobalBelief, sst: &Sst, height: usize) -> Vec<f64> {
    let mut inside = vec![false; sst.nodes.len()];
    for &n in &model.nodes {
        inside[n] = true;
    }
    sst.nodes_at(height).iter().filter(|&&n| !inside[n]).map(|&n| gb.prob(n)).collect()
}

/// Local belief for a model whose states sit at `height`.
pub fn map_belief_to_local(model: &LocalModel, gb: &GlobalBelief, sst: &Sst, height: usize) -> Result<Belief, ExecError> {
    let mut b = vec![0.0; model.pomdp.n_states()];
    for (k, &n) in model.nodes.iter().enumerate() {
        b[k] = gb.prob(n);
    }
    let out: f64 = outside_probs(model, gb, sst, height).iter().sum();
    match model.extra {
        Some(e) => b[e] = out,
        None if out > 1e-9 => return Err(ExecError::Coverage { height, mass: out }),
        None => {}
    }
    Ok(Belief::normalized(b)?)
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Normalized entropy `E / E_max` of the mass outside the local space.
pub fn extra_entropy_ratio(outside: &[f64]) -> f64 {
    let sum: f64 = outside.iter().sum();
    if outside.len() <= 1 || sum < MIN_NORMALIZER {
        return 0.0;
    }
    if outside.iter().all(|&x| x == outside[0]) {
        return 1.0;
    }
    let normalized: Vec<f64> = outside.iter().map(|x| x / sum).collect();
    (entropy(&normalized) / (outside.len() as f64).ln()).min(1.0)
}

/// Shrinks the `extra` coordinate of every vector by `1 / (1 + |α_extra · E/E_max|)`.
pub fn entropy_weight(
    policy: &AlphaVectorPolicy,
    model: &LocalModel,
    gb: &GlobalBelief,
    sst: &Sst,
    height: usize,
) -> Result<AlphaVectorPolicy, ExecError> {
    let e = model.extra.ok_or(ExecError::NoExtra)?;
    Ok(weight_extra(policy, e, extra_ratio(model, gb, sst, height)))
}

pub(crate) fn extra_ratio(model: &LocalModel, gb: &GlobalBelief, sst: &Sst, height: usize) -> f64 {
    extra_entropy_ratio(&outside_probs(model, gb, sst, height))
}

pub(crate) fn weighted_extra(value: f64, ratio: f64) -> f64 {
    value / (1.0 + (value * ratio).abs())
}

pub(crate) fn weight_extra(policy: &AlphaVectorPolicy, extra: usize, ratio: f64) -> AlphaVectorPolicy {
    if ratio == 0.0 {
        return policy.clone();
    }
    let vectors = policy
        .vectors
        .iter()
        .map(|v| {
            let mut values = v.values.clone();
            values[extra] = weighted_extra(values[extra], ratio);
            AlphaVector { action: v.action, values }
        })
        .collect();
    AlphaVectorPolicy { vectors, state_labels: policy.state_labels.clone(), action_labels: policy.action_labels.clone() }
}

//! Abstract-level dynamics estimated by simulating an abstract action's policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::local::LocalModel;
use super::sst::Sst;
use super::{HierarchyError, Level};
use crate::pomdp::{belief_update, best_action, sample_step, AlphaVectorPolicy, Belief};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEstimate {
    /// `(node, probability)` over the source and its neighbors, in the order given.
    pub row: Vec<(usize, f64)>,
    /// Fraction of simulations ending outside the row's domain.
    pub discarded: f64,
    pub truncated: usize,
}

/// Runs `m` simulations of `policy` from uniformly drawn non-special local
/// states and tallies the parent of each final lower state over `domain`
/// (source first). Returns `δ(source)` if every run ended outside the domain.
#[allow(clippy::too_many_arguments)]
pub fn estimate_outcome_row<R: Rng + ?Sized>(
    model: &LocalModel,
    policy: &AlphaVectorPolicy,
    lower: &Level,
    sst: &Sst,
    domain: &[usize],
    m: usize,
    max_steps: usize,
    rng: &mut R,
) -> Result<OutcomeEstimate, HierarchyError> {
    if m == 0 {
        return Err(HierarchyError::ZeroSimulations);
    }
    let height = lower.height - 1;
    let n_local = model.pomdp.n_states();
    let mut counts = vec![0usize; domain.len()];
    let mut truncated = 0;
    for _ in 0..m {
        let k = rng.gen_range(0..model.nodes.len());
        let mut s = lower.position(model.nodes[k]).expect("local node on the lower level");
        let mut b = Belief::delta(n_local, k);
        let mut ended = false;
        for _ in 0..max_steps {
            let (a, _) = best_action(policy, &b)?;
            let Some(la) = model.lower_action[a] else {
                ended = true;
                break;
            };
            let (s2, o) = sample_step(&lower.pomdp, s, la, rng)?;
            s = s2;
            let o_loc = model.map_observation(o).unwrap_or(model.none_obs);
            b = belief_update(&model.pomdp, &b, a, o_loc)?.belief;
        }
        if !ended {
            truncated += 1;
        }
        let parent = sst.ancestor_at(lower.nodes[s], height);
        if let Some(i) = domain.iter().position(|&d| d == parent) {
            counts[i] += 1;
        }
    }
    let counted: usize = counts.iter().sum();
    let discarded = (m - counted) as f64 / m as f64;
    let row = if counted == 0 {
        domain.iter().enumerate().map(|(i, &d)| (d, if i == 0 { 1.0 } else { 0.0 })).collect()
    } else {
        domain.iter().zip(&counts).map(|(&d, &c)| (d, c as f64 / counted as f64)).collect()
    };
    Ok(OutcomeEstimate { row, discarded, truncated })
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AlphaVectorPolicy, Pomdp, PomdpBuilder, PomdpError};

#[derive(Debug, Error)]
pub enum TextError {
    #[error("malformed document: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] PomdpError),
}

#[derive(Serialize, Deserialize)]
struct PomdpDoc {
    states: Vec<String>,
    actions: Vec<String>,
    observations: Vec<String>,
    discount: f64,
    /// `(state, action, target, prob, reward)`
    transitions: Vec<(usize, usize, usize, f64, Option<f64>)>,
    /// `(reached state, action, observation, prob)`
    observation_fn: Vec<(usize, usize, usize, f64)>,
}

impl From<&Pomdp> for PomdpDoc {
    fn from(p: &Pomdp) -> Self {
        let mut transitions = Vec::new();
        let mut observation_fn = Vec::new();
        for s in 0..p.n_states() {
            for a in 0..p.n_actions() {
                for o in p.row(s, a) {
                    transitions.push((s, a, o.target, o.prob, o.reward));
                }
                for &(o, q) in p.obs_row(s, a) {
                    observation_fn.push((s, a, o, q));
                }
            }
        }
        Self {
            states: p.states.clone(),
            actions: p.actions.clone(),
            observations: p.observations.clone(),
            discount: p.discount,
            transitions,
            observation_fn,
        }
    }
}

impl PomdpDoc {
    fn into_pomdp(self) -> Result<Pomdp, PomdpError> {
        let mut b = PomdpBuilder::new(self.states, self.actions, self.observations).discount(self.discount);
        for (s, a, t, p, r) in self.transitions {
            b.add_transition(s, a, t, p);
            if let Some(r) = r {
                b.set_reward(s, a, t, r);
            }
        }
        for (s, a, o, p) in self.observation_fn {
            b.add_observation(s, a, o, p);
        }
        b.build()
    }
}

pub(super) fn pomdp_to_text(p: &Pomdp) -> String {
    serde_json::to_string_pretty(&PomdpDoc::from(p)).expect("POMDP documents always serialize")
}

pub(super) fn pomdp_from_text(text: &str) -> Result<Pomdp, TextError> {
    let doc: PomdpDoc = serde_json::from_str(text)?;
    Ok(doc.into_pomdp()?)
}

pub(super) fn policy_to_text(p: &AlphaVectorPolicy) -> String {
    serde_json::to_string_pretty(p).expect("policies always serialize")
}

pub(super) fn policy_from_text(text: &str) -> Result<AlphaVectorPolicy, TextError> {
    let p: AlphaVectorPolicy = serde_json::from_str(text)?;
    Ok(AlphaVectorPolicy::new(p.vectors, p.state_labels, p.action_labels)?)
}

impl Serialize for Pomdp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PomdpDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pomdp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        PomdpDoc::deserialize(d)?.into_pomdp().map_err(serde::de::Error::custom)
    }
}

//! Grounding a knowledge base into the bottom POMDP.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::kb::{self, KnowledgeBase, ProbEntry, RelationKind, ValidationReport};
use crate::pomdp::{Pomdp, PomdpBuilder, PomdpError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("knowledge base is not valid:\n{0}")]
    Invalid(ValidationReport),
    #[error("no legal outcome for ({state}, {action})")]
    EmptyRow { state: String, action: String },
    #[error("every state is excluded by the constraints")]
    NoStates,
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
}

/// The reward-free POMDP grounded from a knowledge base.
#[derive(Clone, Debug, PartialEq)]
pub struct BottomPomdp {
    pub pomdp: Pomdp,
    pub variables: Vec<String>,
    /// Value identifiers per state, in variable order.
    pub state_tuples: Vec<Vec<String>>,
}

impl BottomPomdp {
    pub fn obs_labels(&self) -> &[String] {
        &self.pomdp.observations
    }

    pub fn state_of_tuple(&self, tuple: &[String]) -> Option<usize> {
        self.state_tuples.iter().position(|t| t == tuple)
    }
}

/// Label of a state tuple: the values joined by `,`.
pub fn tuple_label(tuple: &[String]) -> String {
    tuple.join(",")
}

fn forbidden_by_constraints(kb: &KnowledgeBase, tuple: &[usize]) -> bool {
    kb.constraints.iter().any(|c| {
        c.forbidden.iter().all(|(var, val)| {
            let k = kb.variable_index(var).expect("validated");
            kb.variables[k].values[tuple[k]] == *val
        })
    })
}

/// Cross product of the value sets in declaration order, minus constrained tuples.
fn enumerate_states(kb: &KnowledgeBase) -> Vec<Vec<usize>> {
    let dims: Vec<usize> = kb.variables.iter().map(|v| v.values.len()).collect();
    let mut out = Vec::new();
    if dims.contains(&0) {
        return out;
    }
    let mut cur = vec![0usize; dims.len()];
    loop {
        if !forbidden_by_constraints(kb, &cur) {
            out.push(cur.clone());
        }
        let mut k = dims.len();
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < dims[k] {
                break;
            }
            cur[k] = 0;
        }
    }
}

pub fn build_bottom(kb: &KnowledgeBase) -> Result<BottomPomdp, GroundingError> {
    let report = kb::validate(kb);
    if !report.is_empty() {
        return Err(GroundingError::Invalid(report));
    }
    let tuples = enumerate_states(kb);
    if tuples.is_empty() {
        return Err(GroundingError::NoStates);
    }
    let index: HashMap<&[usize], usize> = tuples.iter().enumerate().map(|(i, t)| (t.as_slice(), i)).collect();
    let labels: Vec<Vec<String>> = tuples
        .iter()
        .map(|t| t.iter().enumerate().map(|(k, &v)| kb.variables[k].values[v].clone()).collect())
        .collect();
    let state_labels: Vec<String> = labels.iter().map(|t| tuple_label(t)).collect();

    let actions: Vec<&kb::ActionDecl> = kb.actions().collect();
    let mut observations: Vec<String> = Vec::new();
    for v in &kb.variables {
        for o in &v.observations {
            if !observations.contains(o) {
                observations.push(o.clone());
            }
        }
    }
    let obs_index: BTreeMap<&str, usize> = observations.iter().enumerate().map(|(i, o)| (o.as_str(), i)).collect();

    let mut builder = PomdpBuilder::new(
        state_labels.clone(),
        actions.iter().map(|a| a.name.clone()).collect(),
        observations.clone(),
    );
    for (ai, action) in actions.iter().enumerate() {
        let k = kb.variable_index(&action.modifies).expect("validated");
        let var = &kb.variables[k];
        let forbidden = kb.forbidden_values(&action.name);
        let trans: Vec<&ProbEntry> = kb.transition_entries(&action.name).collect();
        let obs: Vec<&ProbEntry> = kb.observation_entries(&action.name).collect();

        for (si, tuple) in tuples.iter().enumerate() {
            let w = &var.values[tuple[k]];
            // Targets as value indices of the modified variable.
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            if forbidden.contains(w) {
                row.insert(tuple[k], 1.0);
            } else {
                for e in &trans {
                    match e {
                        ProbEntry::Literal { from, to, prob, .. } if from == w => {
                            *row.entry(var.value_index(to).expect("validated")).or_default() += prob;
                        }
                        ProbEntry::Literal { .. } => {}
                        ProbEntry::Relational { relation, prob, .. } => {
                            let rel = kb.relation(relation).expect("validated");
                            for t in rel.successors(w) {
                                *row.entry(var.value_index(t).expect("validated")).or_default() += prob;
                            }
                        }
                    }
                }
            }
            let mut lost = 0.0;
            let mut entries = Vec::new();
            for (v, p) in row {
                if p <= 0.0 {
                    continue;
                }
                let mut target = tuple.clone();
                target[k] = v;
                match index.get(target.as_slice()) {
                    Some(&ti) => {
                        entries.push((ti, p));
                    }
                    None => lost += p,
                }
            }
            if entries.is_empty() && lost == 0.0 {
                return Err(GroundingError::EmptyRow { state: state_labels[si].clone(), action: action.name.clone() });
            }
            for (ti, p) in entries {
                builder.add_transition(si, ai, ti, p);
            }
            if lost > 0.0 {
                builder.add_transition(si, ai, si, lost);
            }

            let v = &var.values[tuple[k]];
            let mut orow: BTreeMap<usize, f64> = BTreeMap::new();
            for e in &obs {
                match e {
                    ProbEntry::Literal { from, to, prob, .. } if from == v => {
                        *orow.entry(obs_index[to.as_str()]).or_default() += prob;
                    }
                    ProbEntry::Literal { .. } => {}
                    ProbEntry::Relational { relation, prob, .. } => {
                        let rel = kb.relation(relation).expect("validated");
                        debug_assert_eq!(rel.kind, RelationKind::ValueObservation);
                        let mut any = false;
                        for o in rel.successors(v) {
                            any = true;
                            *orow.entry(obs_index[o]).or_default() += prob;
                        }
                        if !any {
                            // Kernel bins without a pair fold into the center observation.
                            *orow.entry(obs_index[v.as_str()]).or_default() += prob;
                        }
                    }
                }
            }
            if orow.values().all(|p| *p <= 0.0) {
                return Err(GroundingError::EmptyRow { state: state_labels[si].clone(), action: action.name.clone() });
            }
            for (o, p) in orow {
                builder.add_observation(si, ai, o, p);
            }
        }
    }
    Ok(BottomPomdp {
        pomdp: builder.build()?,
        variables: kb.variables.iter().map(|v| v.name.clone()).collect(),
        state_tuples: labels,
    })
}

/// Ordered pairs of distinct bottom states related through a value-value
/// relation used by some action's transition entries.
pub fn neighbor_pairs_bottom(kb: &KnowledgeBase, bp: &BottomPomdp) -> BTreeSet<(usize, usize)> {
    let index: HashMap<&[String], usize> = bp.state_tuples.iter().enumerate().map(|(i, t)| (t.as_slice(), i)).collect();
    let mut out = BTreeSet::new();
    for action in kb.actions() {
        let Some(k) = kb.variable_index(&action.modifies) else { continue };
        for e in kb.transition_entries(&action.name) {
            let ProbEntry::Relational { relation, .. } = e else { continue };
            let Some(rel) = kb.relation(relation) else { continue };
            if rel.kind != RelationKind::ValueValue {
                continue;
            }
            for (si, tuple) in bp.state_tuples.iter().enumerate() {
                for t in rel.successors(&tuple[k]) {
                    if *t == tuple[k] {
                        continue;
                    }
                    let mut target = tuple.clone();
                    target[k] = t.to_string();
                    if let Some(&ti) = index.get(target.as_slice()) {
                        out.insert((si, ti));
                    }
                }
            }
        }
    }
    out
}

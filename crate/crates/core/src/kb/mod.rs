//! Two-part knowledge base: general knowledge (basic modules, relations,
//! executability, hierarchical function declaration) and specific knowledge
//! (concrete values, abstract values, relation pairs, hierarchy pairs).
//!
//! Both parts are line-oriented text documents; see [`parse_general`] and
//! [`parse_specific`] for the grammar.

mod parse;
mod validate;
mod write;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use parse::{parse_general, parse_specific, ParseError};
pub use validate::{validate, Issue, ValidationReport};

/// Identifier of the implicit root of the hierarchical function.
pub const ROOT: &str = "root";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateVariable {
    pub name: String,
    pub values: Vec<String>,
    pub observations: Vec<String>,
}

impl StateVariable {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            values: Vec::new(),
            observations: Vec::new(),
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn has_observation(&self, obs: &str) -> bool {
        self.observations.iter().any(|o| o == obs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelationKind {
    /// Pairs of values of the same variable.
    ValueValue,
    /// Pairs (value, observation) of the same variable.
    ValueObservation,
}

impl RelationKind {
    pub fn keyword(self) -> &'static str {
        match self {
            RelationKind::ValueValue => "vv",
            RelationKind::ValueObservation => "vo",
        }
    }
}

/// A named directional binary relation over one variable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub name: String,
    pub kind: RelationKind,
    pub variable: String,
    pub pairs: BTreeSet<(String, String)>,
}

impl Relation {
    /// Second members of every pair whose first member is `from`.
    pub fn successors<'a>(&'a self, from: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.pairs
            .iter()
            .filter(move |(a, _)| a == from)
            .map(|(_, b)| b.as_str())
    }

    pub fn domain(&self) -> BTreeSet<&str> {
        self.pairs.iter().map(|(a, _)| a.as_str()).collect()
    }
}

/// One element of a transition or observation distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ProbEntry {
    /// `⟨from, action, to, p⟩`
    Literal {
        action: String,
        from: String,
        to: String,
        prob: f64,
    },
    /// `⟨action, relation, q⟩`: every pair of the relation gets probability `q`.
    Relational {
        action: String,
        relation: String,
        prob: f64,
    },
}

impl ProbEntry {
    pub fn action(&self) -> &str {
        match self {
            ProbEntry::Literal { action, .. } | ProbEntry::Relational { action, .. } => action,
        }
    }

    pub fn prob(&self) -> f64 {
        match self {
            ProbEntry::Literal { prob, .. } | ProbEntry::Relational { prob, .. } => *prob,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDecl {
    pub name: String,
    pub modifies: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasicModule {
    pub name: String,
    pub variables: Vec<String>,
    pub actions: Vec<ActionDecl>,
    pub transitions: Vec<ProbEntry>,
    pub observations: Vec<ProbEntry>,
}

impl BasicModule {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            variables: Vec::new(),
            actions: Vec::new(),
            transitions: Vec::new(),
            observations: Vec::new(),
        }
    }
}

/// Where an action must not be executed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecGuard {
    /// Forbidden at every value appearing as a first member of the relation's pairs.
    Relation(String),
    /// Forbidden at the listed values.
    Values(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutabilityCondition {
    pub action: String,
    pub guard: ExecGuard,
}

/// A partial assignment declared impossible.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateConstraint {
    pub forbidden: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchicalFunction {
    pub variable: String,
    pub abstract_values: Vec<String>,
    /// child → parent; identifiers without an entry hang directly below [`ROOT`].
    pub parents: BTreeMap<String, String>,
}

impl HierarchicalFunction {
    pub fn new(variable: impl Into<String>) -> Self {
        Self {
            variable: variable.into(),
            abstract_values: Vec::new(),
            parents: BTreeMap::new(),
        }
    }

    pub fn parent_of<'a>(&'a self, id: &str) -> &'a str {
        self.parents.get(id).map(String::as_str).unwrap_or(ROOT)
    }

    pub fn is_abstract(&self, id: &str) -> bool {
        self.abstract_values.iter().any(|a| a == id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub variables: Vec<StateVariable>,
    pub relations: Vec<Relation>,
    pub basic_modules: Vec<BasicModule>,
    pub executability: Vec<ExecutabilityCondition>,
    pub constraints: Vec<StateConstraint>,
    pub hier_fn: Option<HierarchicalFunction>,
}

impl KnowledgeBase {
    pub fn variable(&self, name: &str) -> Option<&StateVariable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    /// All declared actions, in declaration order across modules.
    pub fn actions(&self) -> impl Iterator<Item = &ActionDecl> {
        self.basic_modules.iter().flat_map(|m| m.actions.iter())
    }

    pub fn action(&self, name: &str) -> Option<&ActionDecl> {
        self.actions().find(|a| a.name == name)
    }

    pub fn transition_entries<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a ProbEntry> + 'a {
        self.basic_modules
            .iter()
            .flat_map(|m| m.transitions.iter())
            .filter(move |e| e.action() == action)
    }

    pub fn observation_entries<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a ProbEntry> + 'a {
        self.basic_modules
            .iter()
            .flat_map(|m| m.observations.iter())
            .filter(move |e| e.action() == action)
    }

    /// Values of the modified variable at which `action` must not be executed.
    pub fn forbidden_values(&self, action: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for cond in self.executability.iter().filter(|c| c.action == action) {
            match &cond.guard {
                ExecGuard::Relation(rel) => {
                    if let Some(r) = self.relation(rel) {
                        out.extend(r.domain().into_iter().map(str::to_owned));
                    }
                }
                ExecGuard::Values(vals) => out.extend(vals.iter().cloned()),
            }
        }
        out
    }

    /// Serialize the general part in the line grammar accepted by [`parse_general`].
    pub fn general_text(&self) -> String {
        write::general(self)
    }

    /// Serialize the specific part in the line grammar accepted by [`parse_specific`].
    pub fn specific_text(&self) -> String {
        write::specific(self)
    }
}

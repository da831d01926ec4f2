use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{ExecGuard, KnowledgeBase, ProbEntry, RelationKind, StateVariable, ROOT};

/// Tolerance on expanded row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Every violated invariant of a knowledge base. Empty iff the KB is well formed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

fn rounded(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

pub fn validate(kb: &KnowledgeBase) -> ValidationReport {
    let mut report = ValidationReport::default();

    if kb.basic_modules.is_empty() {
        report.push("general", "no basic module declared");
    }

    let mut modified: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for a in kb.actions() {
        modified.entry(a.modifies.as_str()).or_default().push(&a.name);
        if kb.variable(&a.modifies).is_none() {
            report.push(format!("action {}", a.name), format!("modifies undeclared variable `{}`", a.modifies));
        }
    }
    for v in &kb.variables {
        if !modified.contains_key(v.name.as_str()) {
            report.push(format!("variable {}", v.name), "no action modifies this variable");
        } else if v.observations.is_empty() {
            report.push(format!("variable {}", v.name), "modified variable has no observations");
        }
        if v.values.is_empty() {
            report.push(format!("variable {}", v.name), "no values declared");
        }
        let distinct: BTreeSet<&String> = v.values.iter().collect();
        if distinct.len() != v.values.len() {
            report.push(format!("variable {}", v.name), "duplicate value identifiers");
        }
    }

    for r in &kb.relations {
        let Some(var) = kb.variable(&r.variable) else {
            report.push(format!("relation {}", r.name), format!("over undeclared variable `{}`", r.variable));
            continue;
        };
        for (a, b) in &r.pairs {
            let ok = var.value_index(a).is_some()
                && match r.kind {
                    RelationKind::ValueValue => var.value_index(b).is_some(),
                    RelationKind::ValueObservation => var.has_observation(b),
                };
            if !ok {
                report.push(format!("relation {}", r.name), format!("pair ({a}, {b}) outside the declared domain"));
            }
        }
    }

    for c in &kb.executability {
        let Some(action) = kb.action(&c.action) else {
            report.push(format!("exec-forbid {}", c.action), "undeclared action");
            continue;
        };
        match &c.guard {
            ExecGuard::Relation(r) if kb.relation(r).is_none() => {
                report.push(format!("exec-forbid {}", c.action), format!("undeclared relation `{r}`"));
            }
            ExecGuard::Values(vals) => {
                if let Some(var) = kb.variable(&action.modifies) {
                    for v in vals.iter().filter(|v| var.value_index(v).is_none()) {
                        report.push(format!("exec-forbid {}", c.action), format!("unknown value `{v}`"));
                    }
                }
            }
            _ => {}
        }
    }

    for (i, c) in kb.constraints.iter().enumerate() {
        for (var, val) in &c.forbidden {
            match kb.variable(var) {
                None => report.push(format!("constraint {}", i + 1), format!("undeclared variable `{var}`")),
                Some(v) if v.value_index(val).is_none() => {
                    report.push(format!("constraint {}", i + 1), format!("unknown value `{val}` of `{var}`"))
                }
                _ => {}
            }
        }
    }

    for a in kb.actions() {
        let Some(var) = kb.variable(&a.modifies) else { continue };
        check_transition_rows(kb, &a.name, var, &mut report);
        check_observation_rows(kb, &a.name, var, &mut report);
    }

    check_hierarchy(kb, &mut report);
    report
}

fn check_transition_rows(kb: &KnowledgeBase, action: &str, var: &StateVariable, report: &mut ValidationReport) {
    let forbidden = kb.forbidden_values(action);
    let entries: Vec<&ProbEntry> = kb.transition_entries(action).collect();
    for e in &entries {
        if let ProbEntry::Literal { from, to, .. } = e {
            for v in [from, to] {
                if var.value_index(v).is_none() {
                    report.push(format!("trans {action}"), format!("unknown value `{v}`"));
                }
            }
        }
    }
    for w in var.values.iter().filter(|w| !forbidden.contains(*w)) {
        let mut mass = 0.0;
        for e in &entries {
            match e {
                ProbEntry::Literal { from, prob, .. } if from == w => mass += prob,
                ProbEntry::Literal { .. } => {}
                ProbEntry::Relational { relation, prob, .. } => {
                    let Some(rel) = kb.relation(relation) else { continue };
                    let n = rel.successors(w).count();
                    if n == 0 {
                        report.push(
                            format!("trans ({action}, {w})"),
                            format!("no successor via `{relation}` and no executability exclusion"),
                        );
                    }
                    mass += prob * n.max(1) as f64;
                }
            }
        }
        if (mass - 1.0).abs() > ROW_SUM_TOLERANCE {
            report.push(
                format!("trans ({action}, {w})"),
                format!("row sum {} ≠ 1 for ({action}, {w})", rounded(mass)),
            );
        }
    }
}

fn check_observation_rows(kb: &KnowledgeBase, action: &str, var: &StateVariable, report: &mut ValidationReport) {
    let entries: Vec<&ProbEntry> = kb.observation_entries(action).collect();
    for e in &entries {
        if let ProbEntry::Literal { from, to, .. } = e {
            if var.value_index(from).is_none() {
                report.push(format!("obs {action}"), format!("unknown value `{from}`"));
            }
            if !var.has_observation(to) {
                report.push(format!("obs {action}"), format!("unknown observation `{to}`"));
            }
        }
    }
    // Observation rows are indexed by the reached value, so every value needs one.
    for w in &var.values {
        let mut mass = 0.0;
        for e in &entries {
            match e {
                ProbEntry::Literal { from, prob, .. } if from == w => mass += prob,
                ProbEntry::Literal { .. } => {}
                ProbEntry::Relational { relation, prob, .. } => {
                    let Some(rel) = kb.relation(relation) else { continue };
                    let n = rel.successors(w).count();
                    if n == 0 && !var.has_observation(w) {
                        report.push(
                            format!("obs ({action}, {w})"),
                            format!("`{relation}` has no pair for `{w}` and there is no observation `{w}` to fold the mass into"),
                        );
                    }
                    mass += prob * n.max(1) as f64;
                }
            }
        }
        if (mass - 1.0).abs() > ROW_SUM_TOLERANCE {
            report.push(
                format!("obs ({action}, {w})"),
                format!("row sum {} ≠ 1 for ({action}, {w})", rounded(mass)),
            );
        }
    }
}

fn check_hierarchy(kb: &KnowledgeBase, report: &mut ValidationReport) {
    let Some(h) = &kb.hier_fn else {
        report.push("hier", "no hierarchical function declared");
        return;
    };
    let Some(var) = kb.variable(&h.variable) else {
        report.push("hier", format!("over undeclared variable `{}`", h.variable));
        return;
    };
    let known = |id: &str| var.value_index(id).is_some() || h.is_abstract(id);
    for (child, parent) in &h.parents {
        if !known(child) {
            report.push(format!("hpair {child}"), "unknown child");
        }
        if parent != ROOT && !h.is_abstract(parent) {
            report.push(format!("hpair {child}"), format!("parent `{parent}` is not an abstract value"));
        }
    }
    let mut with_children: BTreeSet<&str> = BTreeSet::new();
    for v in var.values.iter().chain(h.abstract_values.iter()) {
        with_children.insert(h.parent_of(v));
        let mut seen = BTreeSet::new();
        let mut cur = v.as_str();
        while cur != ROOT {
            if !seen.insert(cur) {
                report.push(format!("hier {v}"), "cycle in hierarchy pairs");
                break;
            }
            cur = h.parent_of(cur);
        }
    }
    for a in &h.abstract_values {
        if !with_children.contains(a.as_str()) {
            report.push(format!("hier {a}"), "abstract value has no children (leaves must be concrete values)");
        }
        if var.value_index(a).is_some() {
            report.push(format!("hier {a}"), "identifier is both a concrete and an abstract value");
        }
    }
}

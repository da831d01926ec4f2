use std::fmt::Write;

use super::{ExecGuard, KnowledgeBase, ProbEntry};

fn entry_line(out: &mut String, kw: &str, e: &ProbEntry) {
    match e {
        ProbEntry::Literal {
            action,
            from,
            to,
            prob,
        } => writeln!(out, "{kw} {action} {from} {to} {prob}"),
        ProbEntry::Relational {
            action,
            relation,
            prob,
        } => writeln!(out, "{kw} {action} rel {relation} {prob}"),
    }
    .expect("writing to a String");
}

pub(super) fn general(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for m in &kb.basic_modules {
        let _ = writeln!(out, "module {}", m.name);
        for v in &m.variables {
            let _ = writeln!(out, "var {v}");
        }
        for a in &m.actions {
            let _ = writeln!(out, "action {} modifies {}", a.name, a.modifies);
        }
    }
    for r in &kb.relations {
        let _ = writeln!(out, "rel {} {} over {}", r.name, r.kind.keyword(), r.variable);
    }
    for m in &kb.basic_modules {
        for e in &m.transitions {
            entry_line(&mut out, "trans", e);
        }
        for e in &m.observations {
            entry_line(&mut out, "obs", e);
        }
    }
    if let Some(h) = &kb.hier_fn {
        let _ = writeln!(out, "hier over {}", h.variable);
    }
    for c in &kb.executability {
        let when = match &c.guard {
            ExecGuard::Relation(r) => r.clone(),
            ExecGuard::Values(v) => v.join(" "),
        };
        let _ = writeln!(out, "exec-forbid {} when {when}", c.action);
    }
    out
}

pub(super) fn specific(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    for v in &kb.variables {
        if !v.values.is_empty() {
            let _ = writeln!(out, "values {} {}", v.name, v.values.join(" "));
        }
        if !v.observations.is_empty() {
            let _ = writeln!(out, "observations {} {}", v.name, v.observations.join(" "));
        }
    }
    if let Some(h) = &kb.hier_fn {
        if !h.abstract_values.is_empty() {
            let _ = writeln!(out, "abstract {}", h.abstract_values.join(" "));
        }
    }
    for r in &kb.relations {
        for (a, b) in &r.pairs {
            let _ = writeln!(out, "pair {} {a} {b}", r.name);
        }
    }
    if let Some(h) = &kb.hier_fn {
        for (child, parent) in &h.parents {
            let _ = writeln!(out, "hpair {child} {parent}");
        }
    }
    for c in &kb.constraints {
        let parts: Vec<String> = c.forbidden.iter().map(|(v, x)| format!("{v}={x}")).collect();
        let _ = writeln!(out, "forbid {}", parts.join(" "));
    }
    out
}

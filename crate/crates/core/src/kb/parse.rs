use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::{
    ActionDecl, BasicModule, ExecGuard, ExecutabilityCondition, HierarchicalFunction, KnowledgeBase,
    ProbEntry, Relation, RelationKind, StateConstraint, StateVariable, ROOT,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate identifier `{ident}`")]
    Duplicate { line: usize, ident: String },
    #[error("line {line}: action `{action}` modifies two variables (`{first}` and `{second}`)")]
    ActionModifiesTwoVariables {
        line: usize,
        action: String,
        first: String,
        second: String,
    },
    #[error("line {line}: undeclared {what} `{ident}`")]
    Undeclared {
        line: usize,
        what: &'static str,
        ident: String,
    },
    #[error("no basic module declared")]
    NoModule,
    #[error("hierarchy pairs contain a cycle through `{0}`")]
    Cycle(String),
    #[error("line {line}: `{child}` already has parent `{first}`, second parent `{second}`")]
    SecondParent {
        line: usize,
        child: String,
        first: String,
        second: String,
    },
    #[error("line {line}: `{ROOT}` is the hierarchy root and cannot have a parent (second root)")]
    SecondRoot { line: usize },
    #[error("line {line}: `{ident}` is a concrete value and cannot be a parent in the hierarchy")]
    ConcreteParent { line: usize, ident: String },
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

/// Non-empty, comment-stripped lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let toks: Vec<&str> = body.split_whitespace().collect();
        (!toks.is_empty()).then_some((i + 1, toks))
    })
}

fn parse_prob(line: usize, tok: &str) -> Result<f64, ParseError> {
    let p: f64 = tok
        .parse()
        .map_err(|_| syntax(line, format!("`{tok}` is not a probability")))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(syntax(line, format!("probability {p} outside [0, 1]")));
    }
    Ok(p)
}

fn expect_len(line: usize, toks: &[&str], n: usize, form: &str) -> Result<(), ParseError> {
    if toks.len() != n {
        return Err(syntax(line, format!("expected `{form}`")));
    }
    Ok(())
}

/// Parse a general-knowledge document.
///
/// ```text
/// module <name>
/// var <name>
/// action <name> modifies <var>
/// rel <name> <vv|vo> over <var>
/// trans <action> rel <rel> <prob>      | trans <action> <from> <to> <prob>
/// obs <action> rel <rel> <prob>        | obs <action> <value> <observation> <prob>
/// hier over <var>
/// exec-forbid <action> when <rel>      | exec-forbid <action> when <value>...
/// ```
pub fn parse_general(text: &str) -> Result<KnowledgeBase, ParseError> {
    let mut kb = KnowledgeBase::default();
    let mut action_module: BTreeMap<String, usize> = BTreeMap::new();

    for (line, toks) in lines(text) {
        match toks[0] {
            "module" => {
                expect_len(line, &toks, 2, "module <name>")?;
                if kb.basic_modules.iter().any(|m| m.name == toks[1]) {
                    return Err(ParseError::Duplicate {
                        line,
                        ident: toks[1].into(),
                    });
                }
                kb.basic_modules.push(BasicModule::new(toks[1]));
            }
            "var" => {
                expect_len(line, &toks, 2, "var <name>")?;
                let module = kb
                    .basic_modules
                    .last_mut()
                    .ok_or_else(|| syntax(line, "`var` outside of a module"))?;
                if kb.variables.iter().any(|v| v.name == toks[1]) {
                    return Err(ParseError::Duplicate {
                        line,
                        ident: toks[1].into(),
                    });
                }
                module.variables.push(toks[1].into());
                kb.variables.push(StateVariable::new(toks[1]));
            }
            "action" => {
                if toks.len() != 4 || toks[2] != "modifies" {
                    return Err(syntax(line, "expected `action <name> modifies <var>`"));
                }
                let (name, var) = (toks[1], toks[3]);
                if kb.variable(var).is_none() {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "variable",
                        ident: var.into(),
                    });
                }
                if let Some(prev) = kb.action(name) {
                    if prev.modifies != var {
                        return Err(ParseError::ActionModifiesTwoVariables {
                            line,
                            action: name.into(),
                            first: prev.modifies.clone(),
                            second: var.into(),
                        });
                    }
                    return Err(ParseError::Duplicate {
                        line,
                        ident: name.into(),
                    });
                }
                let idx = kb.basic_modules.len().checked_sub(1).ok_or_else(|| syntax(line, "`action` outside of a module"))?;
                if !kb.basic_modules[idx].variables.iter().any(|v| v == var) {
                    return Err(syntax(
                        line,
                        format!("variable `{var}` is not declared in module `{}`", kb.basic_modules[idx].name),
                    ));
                }
                kb.basic_modules[idx].actions.push(ActionDecl {
                    name: name.into(),
                    modifies: var.into(),
                });
                action_module.insert(name.into(), idx);
            }
            "rel" => {
                if toks.len() != 5 || toks[3] != "over" {
                    return Err(syntax(line, "expected `rel <name> <vv|vo> over <var>`"));
                }
                let kind = match toks[2] {
                    "vv" => RelationKind::ValueValue,
                    "vo" => RelationKind::ValueObservation,
                    other => return Err(syntax(line, format!("unknown relation kind `{other}`"))),
                };
                if kb.relation(toks[1]).is_some() {
                    return Err(ParseError::Duplicate {
                        line,
                        ident: toks[1].into(),
                    });
                }
                if kb.variable(toks[4]).is_none() {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "variable",
                        ident: toks[4].into(),
                    });
                }
                kb.relations.push(Relation {
                    name: toks[1].into(),
                    kind,
                    variable: toks[4].into(),
                    pairs: BTreeSet::new(),
                });
            }
            kw @ ("trans" | "obs") => {
                if toks.len() != 5 {
                    return Err(syntax(line, format!("expected `{kw} <action> rel <rel> <prob>` or `{kw} <action> <a> <b> <prob>`")));
                }
                let action = toks[1];
                let Some(&module) = action_module.get(action) else {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "action",
                        ident: action.into(),
                    });
                };
                let prob = parse_prob(line, toks[4])?;
                let entry = if toks[2] == "rel" {
                    let Some(rel) = kb.relation(toks[3]) else {
                        return Err(ParseError::Undeclared {
                            line,
                            what: "relation",
                            ident: toks[3].into(),
                        });
                    };
                    let want = if kw == "trans" {
                        RelationKind::ValueValue
                    } else {
                        RelationKind::ValueObservation
                    };
                    if rel.kind != want {
                        return Err(syntax(
                            line,
                            format!("relation `{}` is `{}`, `{kw}` needs `{}`", rel.name, rel.kind.keyword(), want.keyword()),
                        ));
                    }
                    let modified = &kb.action(action).expect("registered").modifies;
                    if &rel.variable != modified {
                        return Err(syntax(
                            line,
                            format!("relation `{}` is over `{}` but `{action}` modifies `{modified}`", rel.name, rel.variable),
                        ));
                    }
                    ProbEntry::Relational {
                        action: action.into(),
                        relation: toks[3].into(),
                        prob,
                    }
                } else {
                    ProbEntry::Literal {
                        action: action.into(),
                        from: toks[2].into(),
                        to: toks[3].into(),
                        prob,
                    }
                };
                let m = &mut kb.basic_modules[module];
                if kw == "trans" {
                    m.transitions.push(entry);
                } else {
                    m.observations.push(entry);
                }
            }
            "hier" => {
                if toks.len() != 3 || toks[1] != "over" {
                    return Err(syntax(line, "expected `hier over <var>`"));
                }
                if kb.hier_fn.is_some() {
                    return Err(ParseError::Duplicate {
                        line,
                        ident: "hier".into(),
                    });
                }
                if kb.variable(toks[2]).is_none() {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "variable",
                        ident: toks[2].into(),
                    });
                }
                kb.hier_fn = Some(HierarchicalFunction::new(toks[2]));
            }
            "exec-forbid" => {
                if toks.len() < 4 || toks[2] != "when" {
                    return Err(syntax(line, "expected `exec-forbid <action> when <rel-or-list>`"));
                }
                if kb.action(toks[1]).is_none() {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "action",
                        ident: toks[1].into(),
                    });
                }
                let guard = if toks.len() == 4 && kb.relation(toks[3]).is_some() {
                    ExecGuard::Relation(toks[3].into())
                } else {
                    ExecGuard::Values(toks[3..].iter().map(|s| s.to_string()).collect())
                };
                kb.executability.push(ExecutabilityCondition {
                    action: toks[1].into(),
                    guard,
                });
            }
            other => return Err(syntax(line, format!("unknown declaration `{other}`"))),
        }
    }

    if kb.basic_modules.is_empty() {
        return Err(ParseError::NoModule);
    }
    Ok(kb)
}

/// Parse a specific-knowledge document on top of a parsed general part.
///
/// ```text
/// values <var> <id>...
/// observations <var> <id>...
/// abstract <id>...
/// pair <rel> <a> <b>
/// hpair <child> <parent>
/// forbid <var>=<value> ...
/// ```
pub fn parse_specific(text: &str, general: &KnowledgeBase) -> Result<KnowledgeBase, ParseError> {
    let mut kb = general.clone();
    let mut pair_lines: Vec<(usize, String, String, String)> = Vec::new();
    let mut hpairs: Vec<(usize, String, String)> = Vec::new();
    let mut forbids: Vec<(usize, Vec<(String, String)>)> = Vec::new();

    for (line, toks) in lines(text) {
        match toks[0] {
            kw @ ("values" | "observations") => {
                if toks.len() < 3 {
                    return Err(syntax(line, format!("expected `{kw} <var> <id>...`")));
                }
                let Some(var) = kb.variables.iter_mut().find(|v| v.name == toks[1]) else {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "variable",
                        ident: toks[1].into(),
                    });
                };
                let list = if kw == "values" {
                    &mut var.values
                } else {
                    &mut var.observations
                };
                for id in &toks[2..] {
                    if list.iter().any(|x| x == id) {
                        return Err(ParseError::Duplicate {
                            line,
                            ident: (*id).into(),
                        });
                    }
                    list.push((*id).into());
                }
            }
            "abstract" => {
                let Some(h) = kb.hier_fn.as_mut() else {
                    return Err(syntax(line, "`abstract` needs a `hier over <var>` declaration"));
                };
                for id in &toks[1..] {
                    if h.abstract_values.iter().any(|x| x == id) || *id == ROOT {
                        return Err(ParseError::Duplicate {
                            line,
                            ident: (*id).into(),
                        });
                    }
                    h.abstract_values.push((*id).into());
                }
            }
            "pair" => {
                expect_len(line, &toks, 4, "pair <rel> <a> <b>")?;
                if kb.relation(toks[1]).is_none() {
                    return Err(ParseError::Undeclared {
                        line,
                        what: "relation",
                        ident: toks[1].into(),
                    });
                }
                pair_lines.push((line, toks[1].into(), toks[2].into(), toks[3].into()));
            }
            "hpair" => {
                expect_len(line, &toks, 3, "hpair <child> <parent>")?;
                if kb.hier_fn.is_none() {
                    return Err(syntax(line, "`hpair` needs a `hier over <var>` declaration"));
                }
                hpairs.push((line, toks[1].into(), toks[2].into()));
            }
            "forbid" => {
                if toks.len() < 2 {
                    return Err(syntax(line, "expected `forbid <var>=<value> ...`"));
                }
                let mut assignment = Vec::new();
                for t in &toks[1..] {
                    let (var, val) = t
                        .split_once('=')
                        .ok_or_else(|| syntax(line, format!("`{t}` is not `<var>=<value>`")))?;
                    assignment.push((var.to_string(), val.to_string()));
                }
                forbids.push((line, assignment));
            }
            other => return Err(syntax(line, format!("unknown declaration `{other}`"))),
        }
    }

    for (line, rel_name, a, b) in pair_lines {
        let rel = kb.relation(&rel_name).expect("checked above");
        let var = kb.variable(&rel.variable).expect("relation variables are declared");
        if var.value_index(&a).is_none() {
            return Err(ParseError::Undeclared {
                line,
                what: "value",
                ident: a,
            });
        }
        let second_ok = match rel.kind {
            RelationKind::ValueValue => var.value_index(&b).is_some(),
            RelationKind::ValueObservation => var.has_observation(&b),
        };
        if !second_ok {
            return Err(ParseError::Undeclared {
                line,
                what: if rel.kind == RelationKind::ValueValue {
                    "value"
                } else {
                    "observation"
                },
                ident: b,
            });
        }
        let rel = kb
            .relations
            .iter_mut()
            .find(|r| r.name == rel_name)
            .expect("checked above");
        rel.pairs.insert((a, b));
    }

    for (line, assignment) in forbids {
        for (var, val) in &assignment {
            let Some(v) = kb.variable(var) else {
                return Err(ParseError::Undeclared {
                    line,
                    what: "variable",
                    ident: var.clone(),
                });
            };
            if v.value_index(val).is_none() {
                return Err(ParseError::Undeclared {
                    line,
                    what: "value",
                    ident: val.clone(),
                });
            }
        }
        kb.constraints.push(StateConstraint { forbidden: assignment });
    }

    if let Some(mut h) = kb.hier_fn.take() {
        attach_hierarchy(&kb, &mut h, hpairs)?;
        kb.hier_fn = Some(h);
    }
    Ok(kb)
}

fn attach_hierarchy(
    kb: &KnowledgeBase,
    h: &mut HierarchicalFunction,
    hpairs: Vec<(usize, String, String)>,
) -> Result<(), ParseError> {
    let var = kb.variable(&h.variable).expect("hier variable declared");
    let known = |h: &HierarchicalFunction, id: &str| var.value_index(id).is_some() || h.is_abstract(id);
    let mut lines_of: BTreeMap<String, usize> = BTreeMap::new();
    for (line, child, parent) in hpairs {
        if child == ROOT {
            return Err(ParseError::SecondRoot { line });
        }
        if !known(h, &child) {
            return Err(ParseError::Undeclared {
                line,
                what: "hierarchy value",
                ident: child,
            });
        }
        if parent != ROOT && !known(h, &parent) {
            return Err(ParseError::Undeclared {
                line,
                what: "hierarchy value",
                ident: parent,
            });
        }
        if let Some(first) = h.parents.get(&child) {
            if *first == parent {
                continue;
            }
            return Err(ParseError::SecondParent {
                line,
                child,
                first: first.clone(),
                second: parent,
            });
        }
        lines_of.insert(child.clone(), line);
        h.parents.insert(child, parent);
    }

    for start in h.parents.keys() {
        let mut seen = BTreeSet::new();
        let mut cur = start.as_str();
        while cur != ROOT {
            if !seen.insert(cur) {
                return Err(ParseError::Cycle(cur.to_string()));
            }
            cur = h.parent_of(cur);
        }
    }

    for (child, parent) in &h.parents {
        if var.value_index(parent).is_some() {
            return Err(ParseError::ConcreteParent {
                line: lines_of[child],
                ident: parent.clone(),
            });
        }
    }
    Ok(())
}

//! State-space tree and lifted neighbor relations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::HierarchyError;
use crate::grounding::{tuple_label, BottomPomdp};
use crate::kb::{KnowledgeBase, ROOT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SstNode {
    pub label: String,
    /// Empty for the root.
    pub tuple: Vec<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub height: usize,
    /// Position among the nodes of the same height.
    pub level_index: usize,
}

/// Node 0 is the root. Leaves are the bottom states, in the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sst {
    pub nodes: Vec<SstNode>,
    /// Node ids per height; `levels[0] == [0]`.
    pub levels: Vec<Vec<usize>>,
}

impl Sst {
    pub const ROOT: usize = 0;

    /// Height of the leaves.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn node(&self, id: usize) -> &SstNode {
        &self.nodes[id]
    }

    pub fn nodes_at(&self, height: usize) -> &[usize] {
        &self.levels[height]
    }

    /// Node id of bottom state `s`.
    pub fn leaf(&self, s: usize) -> usize {
        self.levels[self.depth()][s]
    }

    pub fn find(&self, label: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.label == label)
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    /// Path from the root down to `id`.
    pub fn path_to(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Ancestor of `id` at `height` (`id` itself at its own height).
    pub fn ancestor_at(&self, id: usize, height: usize) -> usize {
        let mut cur = id;
        while self.nodes[cur].height > height {
            cur = self.nodes[cur].parent.expect("non-root node has a parent");
        }
        cur
    }

    /// Leaves below `id`, in bottom-state order.
    pub fn leaves_under(&self, id: usize) -> Vec<usize> {
        let d = self.depth();
        self.levels[d].iter().copied().filter(|&l| self.ancestor_at(l, self.nodes[id].height) == id).collect()
    }
}

pub fn build_sst(kb: &KnowledgeBase, bp: &BottomPomdp) -> Result<Sst, HierarchyError> {
    let h = kb.hier_fn.as_ref().ok_or(HierarchyError::NoHierarchicalFunction)?;
    let j = kb.variable_index(&h.variable).ok_or(HierarchyError::NoHierarchicalFunction)?;

    // Height above the leaves of every value of the hierarchical variable.
    let var = &kb.variables[j];
    let mut steps: BTreeMap<&str, usize> = BTreeMap::new();
    for v in &var.values {
        let mut n = 1;
        let mut cur = h.parent_of(v);
        while cur != ROOT {
            n += 1;
            if n > h.abstract_values.len() + 2 {
                return Err(HierarchyError::Ragged(format!("`{v}` does not reach the root")));
            }
            cur = h.parent_of(cur);
        }
        steps.insert(v, n);
    }
    let depth = *steps.values().next().ok_or_else(|| HierarchyError::Ragged("no values".into()))?;
    if let Some((v, n)) = steps.iter().find(|(_, &n)| n != depth) {
        return Err(HierarchyError::Ragged(format!("`{v}` is {n} levels deep, expected {depth}")));
    }

    let mut nodes = vec![SstNode {
        label: ROOT.to_string(),
        tuple: Vec::new(),
        parent: None,
        children: Vec::new(),
        height: 0,
        level_index: 0,
    }];
    let mut levels: Vec<Vec<usize>> = vec![Vec::new(); depth + 1];
    levels[0].push(0);

    let mut current: Vec<usize> = Vec::new();
    for tuple in &bp.state_tuples {
        let id = nodes.len();
        nodes.push(SstNode {
            label: tuple_label(tuple),
            tuple: tuple.clone(),
            parent: None,
            children: Vec::new(),
            height: depth,
            level_index: current.len(),
        });
        current.push(id);
    }
    levels[depth] = current.clone();

    for height in (1..depth).rev() {
        let mut by_tuple: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        let mut next = Vec::new();
        for &child in &current {
            let mut t = nodes[child].tuple.clone();
            t[j] = h.parent_of(&t[j]).to_string();
            let id = match by_tuple.get(&t) {
                Some(&id) => id,
                None => {
                    let id = nodes.len();
                    nodes.push(SstNode {
                        label: tuple_label(&t),
                        tuple: t.clone(),
                        parent: None,
                        children: Vec::new(),
                        height,
                        level_index: next.len(),
                    });
                    by_tuple.insert(t, id);
                    next.push(id);
                    id
                }
            };
            nodes[child].parent = Some(id);
            nodes[id].children.push(child);
        }
        levels[height] = next.clone();
        current = next;
    }
    for &child in &current {
        nodes[child].parent = Some(0);
        nodes[0].children.push(child);
    }
    Ok(Sst { nodes, levels })
}

/// Ordered neighbor pairs of node ids, per height.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    /// `pairs[h]` holds the pairs at height `h`; `pairs[0]` is empty.
    pub pairs: Vec<BTreeSet<(usize, usize)>>,
}

impl NeighborIndex {
    pub fn at(&self, height: usize) -> &BTreeSet<(usize, usize)> {
        &self.pairs[height]
    }

    pub fn are_neighbors(&self, height: usize, a: usize, b: usize) -> bool {
        self.pairs[height].contains(&(a, b))
    }

    /// Nodes `t` with `(id, t)` a pair.
    pub fn neighbors_of(&self, height: usize, id: usize) -> Vec<usize> {
        self.pairs[height].range((id, 0)..=(id, usize::MAX)).map(|&(_, t)| t).collect()
    }
}

/// `bottom_pairs` are bottom-state indices.
pub fn lift_neighbors(sst: &Sst, bottom_pairs: &BTreeSet<(usize, usize)>) -> NeighborIndex {
    let depth = sst.depth();
    let mut pairs = vec![BTreeSet::new(); depth + 1];
    pairs[depth] = bottom_pairs.iter().map(|&(a, b)| (sst.leaf(a), sst.leaf(b))).collect();
    for height in (1..depth).rev() {
        let lifted: BTreeSet<(usize, usize)> = pairs[height + 1]
            .iter()
            .filter_map(|&(a, b)| {
                let (pa, pb) = (sst.nodes[a].parent?, sst.nodes[b].parent?);
                (pa != pb).then_some((pa, pb))
            })
            .collect();
        pairs[height] = lifted;
    }
    NeighborIndex { pairs }
}

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, CweId, NodeId};
use crate::error::{Error, Result};
use crate::fingerprint::content_hash;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweNode {
    pub id: CweId,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub extended_description: Option<String>,
    #[serde(default)]
    pub parent_ids: BTreeSet<CweId>,
}

impl CweNode {
    pub fn new(id: u32, name: &str, description: &str, parents: &[u32]) -> Self {
        Self {
            id: CweId(id),
            name: name.to_string(),
            description: description.to_string(),
            extended_description: None,
            parent_ids: parents.iter().map(|&p| CweId(p)).collect(),
        }
    }

    /// Name, description and extended description joined into one text.
    pub fn text(&self) -> String {
        let mut s = format!("{}. {}", self.name, self.description);
        if let Some(ext) = &self.extended_description {
            s.push(' ');
            s.push_str(ext);
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct TaxonomyFile {
    nodes: Vec<CweNode>,
}

/// The CWE hierarchy as a DAG under a synthetic virtual root.
///
/// Nodes without declared parents become the children of [`NodeId::Root`].
/// Child lists are sorted by ascending CWE number.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: BTreeMap<CweId, CweNode>,
    children: BTreeMap<NodeId, Vec<CweId>>,
}

impl Taxonomy {
    pub fn new(nodes: Vec<CweNode>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for n in nodes {
            let id = n.id;
            if map.insert(id, n).is_some() {
                return Err(Error::Validation(format!("duplicate taxonomy node {id}")));
            }
        }
        let mut children: BTreeMap<NodeId, BTreeSet<CweId>> = BTreeMap::new();
        children.insert(NodeId::Root, BTreeSet::new());
        for n in map.values() {
            if n.parent_ids.is_empty() {
                children.entry(NodeId::Root).or_default().insert(n.id);
            }
            for p in &n.parent_ids {
                if !map.contains_key(p) {
                    return Err(Error::Validation(format!(
                        "{} has unknown parent {p}",
                        n.id
                    )));
                }
                children.entry(NodeId::Cwe(*p)).or_default().insert(n.id);
            }
        }
        let tax = Self {
            nodes: map,
            children: children
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        };
        if let Some(cycle) = tax.find_cycle() {
            let rendered: Vec<String> = cycle.iter().map(ToString::to_string).collect();
            return Err(Error::Validation(format!(
                "cycle in taxonomy: {}",
                rendered.join(" -> ")
            )));
        }
        Ok(tax)
    }

    /// Iterative three-colour DFS over parent->child edges. Returns one cycle
    /// as a closed walk (first element repeated at the end).
    fn find_cycle(&self) -> Option<Vec<CweId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            White,
            Grey,
            Black,
        }
        let mut mark: BTreeMap<CweId, Mark> = self.nodes.keys().map(|&k| (k, Mark::White)).collect();
        for &start in self.nodes.keys() {
            if mark[&start] != Mark::White {
                continue;
            }
            let mut stack: Vec<(CweId, usize)> = vec![(start, 0)];
            mark.insert(start, Mark::Grey);
            while let Some(top) = stack.last_mut() {
                let (node, next) = *top;
                let kids = self.children_of(NodeId::Cwe(node));
                if next < kids.len() {
                    let child = kids[next];
                    top.1 += 1;
                    match mark[&child] {
                        Mark::White => {
                            mark.insert(child, Mark::Grey);
                            stack.push((child, 0));
                        }
                        Mark::Grey => {
                            let pos = stack.iter().position(|(n, _)| *n == child).unwrap();
                            let mut cycle: Vec<CweId> = stack[pos..].iter().map(|(n, _)| *n).collect();
                            cycle.push(child);
                            return Some(cycle);
                        }
                        Mark::Black => {}
                    }
                } else {
                    mark.insert(node, Mark::Black);
                    stack.pop();
                }
            }
        }
        None
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("taxonomy: {e}")))?;
        Self::new(file.nodes)
    }

    /// Canonical JSON: nodes in ascending id order, parents sorted.
    pub fn to_json(&self) -> String {
        let file = TaxonomyFile {
            nodes: self.nodes.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }

    pub fn fingerprint(&self) -> String {
        content_hash(self.to_json().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_id(&self) -> NodeId {
        NodeId::Root
    }

    pub fn contains(&self, id: CweId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: CweId) -> Option<&CweNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &CweNode> {
        self.nodes.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = CweId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn children_of(&self, id: NodeId) -> &[CweId] {
        self.children.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Parents of a CWE node, with `Root` standing in for "no declared parent".
    pub fn parents_of(&self, id: CweId) -> Vec<NodeId> {
        match self.nodes.get(&id) {
            Some(n) if n.parent_ids.is_empty() => vec![NodeId::Root],
            Some(n) => n.parent_ids.iter().map(|&p| NodeId::Cwe(p)).collect(),
            None => Vec::new(),
        }
    }

    /// Every node (including the root) that has at least one child.
    pub fn internal_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| *k)
    }

    pub fn is_edge(&self, parent: NodeId, child: CweId) -> bool {
        self.children_of(parent).binary_search(&child).is_ok()
    }

    /// Every distinct root-to-`id` path, each excluding the virtual root and
    /// ending at `id`. Sorted lexicographically.
    pub fn paths_to_root(&self, id: CweId) -> Result<Vec<Vec<CweId>>> {
        if !self.contains(id) {
            return Err(Error::Lookup(format!("{id} is not in the taxonomy")));
        }
        let mut memo = BTreeMap::new();
        let mut paths = self.paths_memo(id, &mut memo);
        paths.sort();
        paths.dedup();
        Ok(paths)
    }

    fn paths_memo(&self, id: CweId, memo: &mut BTreeMap<CweId, Vec<Vec<CweId>>>) -> Vec<Vec<CweId>> {
        if let Some(p) = memo.get(&id) {
            return p.clone();
        }
        let node = &self.nodes[&id];
        let out = if node.parent_ids.is_empty() {
            vec![vec![id]]
        } else {
            let mut out = Vec::new();
            for &p in &node.parent_ids {
                for mut path in self.paths_memo(p, memo) {
                    path.push(id);
                    out.push(path);
                }
            }
            out
        };
        memo.insert(id, out.clone());
        out
    }

    /// `id` itself plus every node above it.
    pub fn ancestors_or_self(&self, id: CweId) -> BTreeSet<CweId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                if let Some(node) = self.nodes.get(&n) {
                    stack.extend(node.parent_ids.iter().copied());
                }
            }
        }
        out
    }

    /// `id` itself plus every node below it.
    pub fn descendants_or_self(&self, id: CweId) -> BTreeSet<CweId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if out.insert(n) {
                stack.extend(self.children_of(NodeId::Cwe(n)).iter().copied());
            }
        }
        out
    }

    /// True when `desc` lies strictly below `anc`.
    pub fn is_strict_descendant(&self, desc: CweId, anc: CweId) -> bool {
        desc != anc && self.ancestors_or_self(desc).contains(&anc)
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<Taxonomy> {
    Taxonomy::from_json(&read_to_string(path.as_ref())?)
}

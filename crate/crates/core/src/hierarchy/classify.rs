use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{HierarchicalModel, ModelKind};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ingest::{CveRecord, CweId, NodeId, Taxonomy};
use crate::netcore::{Network, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;

/// How children are picked at each visited node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SelectionMode {
    /// Every child whose sigmoid score is at least `tau`.
    Threshold { tau: f64 },
    /// The `k` highest-scoring children (ties broken by child order).
    TopK { k: usize },
}

impl Default for SelectionMode {
    fn default() -> Self {
        SelectionMode::Threshold {
            tau: DEFAULT_THRESHOLD,
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMode::Threshold { tau } => write!(f, "threshold(tau={tau})"),
            SelectionMode::TopK { k } => write!(f, "topk(k={k})"),
        }
    }
}

impl SelectionMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SelectionMode::Threshold { tau } if !(0.0..=1.0).contains(&tau) => {
                Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")))
            }
            SelectionMode::TopK { k: 0 } => Err(Error::Config("k must be at least 1".into())),
            _ => Ok(()),
        }
    }

    /// Indices of the selected outputs, ascending.
    pub fn select<T: Scalar>(&self, logits: &[T]) -> Vec<usize> {
        match *self {
            SelectionMode::Threshold { tau } => {
                // sigmoid(x) >= tau  <=>  x >= logit(tau); exact at tau = 0 and 1
                let cut = if tau <= 0.0 {
                    f64::NEG_INFINITY
                } else if tau >= 1.0 {
                    f64::INFINITY
                } else {
                    (tau / (1.0 - tau)).ln()
                };
                logits
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| x.as_f64() >= cut)
                    .map(|(i, _)| i)
                    .collect()
            }
            SelectionMode::TopK { k } => {
                let mut idx: Vec<usize> = (0..logits.len()).collect();
                idx.sort_by(|&a, &b| {
                    logits[b]
                        .partial_cmp(&logits[a])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.cmp(&b))
                });
                idx.truncate(k);
                idx.sort_unstable();
                idx
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub cwe: CweId,
    pub score: f64,
}

/// Output of top-down classification for one description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: Option<String>,
    /// Selected classes in ascending id order.
    pub candidates: Vec<Candidate>,
    /// Maximal root-to-leaf paths through selected classes (root excluded).
    pub paths: Vec<Vec<CweId>>,
    pub mode: SelectionMode,
    /// Sigmoid score of every evaluated child; the maximum when a class is
    /// scored by several parents.
    #[serde(skip)]
    pub scores: BTreeMap<CweId, f64>,
    /// Number of classifier evaluations performed.
    #[serde(skip)]
    pub evaluated_nodes: usize,
    /// Selected nodes with children but no classifier.
    #[serde(skip)]
    pub stopped_at: Vec<CweId>,
}

impl Prediction {
    pub fn candidate_ids(&self) -> BTreeSet<CweId> {
        self.candidates.iter().map(|c| c.cwe).collect()
    }

    /// Last element of every path.
    pub fn deepest(&self) -> BTreeSet<CweId> {
        self.paths.iter().filter_map(|p| p.last().copied()).collect()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("prediction serializes")
    }
}

/// All root-to-sink paths of a selection graph given as parent -> children
/// edges.
pub(crate) fn maximal_paths(edges: &BTreeMap<NodeId, BTreeSet<CweId>>) -> Vec<Vec<CweId>> {
    let mut out = Vec::new();
    let mut stack: Vec<(NodeId, Vec<CweId>)> = vec![(NodeId::Root, Vec::new())];
    while let Some((node, path)) = stack.pop() {
        match edges.get(&node).filter(|c| !c.is_empty()) {
            Some(kids) => {
                for &c in kids.iter().rev() {
                    let mut p = path.clone();
                    p.push(c);
                    stack.push((NodeId::Cwe(c), p));
                }
            }
            None if !path.is_empty() => out.push(path),
            None => {}
        }
    }
    out.sort();
    out
}

impl<T: Scalar> HierarchicalModel<T> {
    /// Preprocesses and classifies one description.
    pub fn classify(&self, text: &str, mode: SelectionMode) -> Result<Prediction> {
        if text.trim().is_empty() {
            return Err(Error::Validation("description is empty".into()));
        }
        self.classify_features(&self.encode(text), mode)
    }

    pub fn classify_record(&self, rec: &CveRecord, mode: SelectionMode) -> Result<Prediction> {
        let mut p = self.classify(&rec.description, mode)?;
        p.id = Some(rec.id.clone());
        Ok(p)
    }

    pub fn classify_features(&self, fv: &FeatureVector, mode: SelectionMode) -> Result<Prediction> {
        mode.validate()?;
        match self.kind {
            ModelKind::Flat => self.classify_flat(fv, mode),
            _ => self.classify_top_down(fv, mode),
        }
    }

    fn classify_top_down(&self, fv: &FeatureVector, mode: SelectionMode) -> Result<Prediction> {
        let mut edges: BTreeMap<NodeId, BTreeSet<CweId>> = BTreeMap::new();
        let mut scores: BTreeMap<CweId, f64> = BTreeMap::new();
        let mut best: BTreeMap<CweId, f64> = BTreeMap::new();
        let mut stopped_at = Vec::new();
        let mut evaluated = 0;

        let mut seen: BTreeSet<NodeId> = BTreeSet::from([NodeId::Root]);
        let mut queue: VecDeque<NodeId> = VecDeque::from([NodeId::Root]);
        while let Some(node) = queue.pop_front() {
            if self.taxonomy.children_of(node).is_empty() {
                continue;
            }
            let Some(net) = self.classifiers.get(&node) else {
                if let NodeId::Cwe(c) = node {
                    stopped_at.push(c);
                }
                continue;
            };
            evaluated += 1;
            let logits = net.logits(fv)?;
            let kids = net.child_ids();
            for (c, x) in kids.iter().zip(&logits) {
                let s = crate::scalar::sigmoid(*x).as_f64();
                let e = scores.entry(*c).or_insert(s);
                *e = e.max(s);
            }
            for i in mode.select(&logits) {
                let c = kids[i];
                let s = crate::scalar::sigmoid(logits[i]).as_f64();
                let e = best.entry(c).or_insert(s);
                *e = e.max(s);
                edges.entry(node).or_default().insert(c);
                if seen.insert(NodeId::Cwe(c)) {
                    queue.push_back(NodeId::Cwe(c));
                }
            }
        }
        Ok(Prediction {
            id: None,
            candidates: best
                .into_iter()
                .map(|(cwe, score)| Candidate { cwe, score })
                .collect(),
            paths: maximal_paths(&edges),
            mode,
            scores,
            evaluated_nodes: evaluated,
            stopped_at,
        })
    }

    /// One-shot selection over every class, then restricted to classes
    /// connected to the root through selected classes.
    fn classify_flat(&self, fv: &FeatureVector, mode: SelectionMode) -> Result<Prediction> {
        let net = self
            .classifiers
            .get(&NodeId::Root)
            .ok_or_else(|| Error::Integrity("flat model has no root classifier".into()))?;
        let logits = net.logits(fv)?;
        let classes = net.child_ids();
        let scores: BTreeMap<CweId, f64> = classes
            .iter()
            .zip(&logits)
            .map(|(c, x)| (*c, crate::scalar::sigmoid(*x).as_f64()))
            .collect();
        let chosen: BTreeSet<CweId> = mode.select(&logits).into_iter().map(|i| classes[i]).collect();
        let edges = selection_edges(&self.taxonomy, &chosen);
        let reachable: BTreeSet<CweId> = edges.values().flatten().copied().collect();
        Ok(Prediction {
            id: None,
            candidates: reachable
                .iter()
                .map(|&cwe| Candidate {
                    cwe,
                    score: scores[&cwe],
                })
                .collect(),
            paths: maximal_paths(&edges),
            mode,
            scores,
            evaluated_nodes: 1,
            stopped_at: Vec::new(),
        })
    }
}

/// Taxonomy edges among `chosen` that hang off the root through chosen
/// nodes only.
fn selection_edges(taxonomy: &Taxonomy, chosen: &BTreeSet<CweId>) -> BTreeMap<NodeId, BTreeSet<CweId>> {
    let mut edges: BTreeMap<NodeId, BTreeSet<CweId>> = BTreeMap::new();
    let mut queue = VecDeque::from([NodeId::Root]);
    let mut seen = BTreeSet::from([NodeId::Root]);
    while let Some(node) = queue.pop_front() {
        for &c in taxonomy.children_of(node) {
            if chosen.contains(&c) {
                edges.entry(node).or_default().insert(c);
                if seen.insert(NodeId::Cwe(c)) {
                    queue.push_back(NodeId::Cwe(c));
                }
            }
        }
    }
    edges
}

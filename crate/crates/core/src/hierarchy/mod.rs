//! The classifier tree: per-node training sets, TF-IDF-seeded training of
//! one classifier per internal taxonomy node, top-down inference, and the
//! flat and two-layer baselines.

mod classify;

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_dictionary, Dictionary, FeatureVector, DEFAULT_MIN_COUNT};
use crate::fingerprint::Fingerprinter;
use crate::ingest::{CveRecord, CweId, NodeId, Taxonomy};
use crate::matrix::Matrix;
use crate::netcore::{fit, Example, Network, NodeClassifier, RowGradient, TrainConfig, TrainingLog, TwoLayerClassifier};
use crate::scalar::Scalar;
use crate::scoring::{dictionary_counts, init_weights_with, ClassDocument, DocumentFrequencies, IdfScope, TermId};
use crate::textprep::{Preprocessor, TokenSequence};

pub use classify::{Candidate, Prediction, SelectionMode};

/// Default hidden width of the two-layer baseline.
pub const DEFAULT_HIDDEN_SIZE: usize = 64;

/// Which network family a model holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelKind {
    /// Single-layer classifier per node, TF-IDF initialized.
    #[default]
    Hierarchical,
    /// Per-node classifiers with one hidden layer, randomly initialized.
    TwoLayer { hidden_size: usize },
    /// One randomly initialized single-layer classifier over every class.
    Flat,
}

/// Starting point of the hierarchical classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    #[default]
    TfIdf,
    /// Glorot-uniform, seeded per node.
    Random,
}

/// Everything that shapes training besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Minimum corpus occurrence count for a dictionary term.
    pub min_count: u64,
    pub idf_scope: IdfScope,
    pub init: WeightInit,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            min_count: DEFAULT_MIN_COUNT,
            idf_scope: IdfScope::default(),
            init: WeightInit::default(),
            train: TrainConfig::default(),
        }
    }
}

/// A node's network: the single-layer classifier or the two-layer baseline.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeNet<T> {
    Linear(NodeClassifier<T>),
    TwoLayer(TwoLayerClassifier<T>),
}

impl<T: Scalar> NodeNet<T> {
    pub fn node_id(&self) -> NodeId {
        match self {
            NodeNet::Linear(c) => c.node_id,
            NodeNet::TwoLayer(c) => c.node_id,
        }
    }

    pub fn child_ids(&self) -> &[CweId] {
        match self {
            NodeNet::Linear(c) => &c.child_ids,
            NodeNet::TwoLayer(c) => &c.child_ids,
        }
    }

    pub fn dictionary_fingerprint(&self) -> &str {
        match self {
            NodeNet::Linear(c) => &c.dictionary_fingerprint,
            NodeNet::TwoLayer(c) => &c.dictionary_fingerprint,
        }
    }

    /// Weight matrices from input to output.
    pub fn layers(&self) -> Vec<&Matrix<T>> {
        match self {
            NodeNet::Linear(c) => vec![&c.weights],
            NodeNet::TwoLayer(c) => vec![&c.hidden, &c.output],
        }
    }

    pub fn as_linear(&self) -> Option<&NodeClassifier<T>> {
        match self {
            NodeNet::Linear(c) => Some(c),
            NodeNet::TwoLayer(_) => None,
        }
    }
}

impl<T: Scalar> Network<T> for NodeNet<T> {
    fn n_outputs(&self) -> usize {
        self.child_ids().len()
    }

    fn input_dim(&self) -> usize {
        match self {
            NodeNet::Linear(c) => c.input_dim(),
            NodeNet::TwoLayer(c) => c.input_dim(),
        }
    }

    fn logits(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        match self {
            NodeNet::Linear(c) => c.logits(fv),
            NodeNet::TwoLayer(c) => c.logits(fv),
        }
    }

    fn loss_and_gradients(&self, batch: &[&Example]) -> Result<(T, Vec<RowGradient<T>>)> {
        match self {
            NodeNet::Linear(c) => c.loss_and_gradients(batch),
            NodeNet::TwoLayer(c) => c.loss_and_gradients(batch),
        }
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        match self {
            NodeNet::Linear(c) => c.parameters_mut(),
            NodeNet::TwoLayer(c) => c.parameters_mut(),
        }
    }
}

/// Per-node training summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct NodeTraining {
    pub examples: usize,
    pub epochs: usize,
}

/// A trained model: taxonomy, text assets, dictionary and one network per
/// internal node (a single root network for [`ModelKind::Flat`]).
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalModel<T> {
    pub kind: ModelKind,
    pub taxonomy: Taxonomy,
    pub preprocessor: Preprocessor,
    pub dictionary: Dictionary,
    pub classifiers: BTreeMap<NodeId, NodeNet<T>>,
    pub training: BTreeMap<NodeId, NodeTraining>,
    pub config: PipelineConfig,
}

impl<T: Scalar> HierarchicalModel<T> {
    pub fn classifier(&self, node: NodeId) -> Option<&NodeNet<T>> {
        self.classifiers.get(&node)
    }

    /// Nodes whose classifier was fitted to at least one example.
    pub fn trained_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.training
            .iter()
            .filter(|(_, t)| t.examples > 0)
            .map(|(n, _)| *n)
    }

    pub fn encode(&self, text: &str) -> FeatureVector {
        self.dictionary.encode_tokens(&self.preprocessor.run(text))
    }

    /// Content hash over configuration, assets and every weight.
    pub fn fingerprint(&self) -> String {
        let mut f = Fingerprinter::new();
        f.part(serde_json::to_string(&self.kind).unwrap().as_bytes())
            .part(serde_json::to_string(&self.config).unwrap().as_bytes())
            .part(self.taxonomy.fingerprint().as_bytes())
            .part(self.dictionary.fingerprint().as_bytes())
            .part(self.preprocessor.fingerprint().as_bytes());
        for (node, net) in &self.classifiers {
            f.part(node.to_string().as_bytes());
            let kids: Vec<String> = net.child_ids().iter().map(ToString::to_string).collect();
            f.part(kids.join(",").as_bytes());
            for layer in net.layers() {
                let bytes: Vec<u8> = layer.as_slice().iter().flat_map(|v| v.as_f64().to_le_bytes()).collect();
                f.part(&bytes);
            }
        }
        f.finish()
    }
}

/// A corpus record reduced to its labels that resolve in the taxonomy.
fn resolve_labels(rec: &CveRecord, taxonomy: &Taxonomy) -> BTreeSet<CweId> {
    rec.cwe_labels
        .iter()
        .copied()
        .filter(|l| {
            let ok = taxonomy.contains(*l);
            if !ok {
                warn!("{}: label {l} not in taxonomy, skipped", rec.id);
            }
            ok
        })
        .collect()
}

/// Builds per-node examples. A CVE labeled `c` contributes one example at
/// every node on a root-to-`c` path, with a bit set for each child of that
/// node lying on such a path. Unknown labels are skipped with a warning.
pub fn assemble_training_sets(
    items: &[(FeatureVector, BTreeSet<CweId>)],
    taxonomy: &Taxonomy,
) -> BTreeMap<NodeId, Vec<Example>> {
    let mut out: BTreeMap<NodeId, Vec<Example>> = BTreeMap::new();
    for (fv, labels) in items {
        let mut bits: BTreeMap<NodeId, BTreeSet<CweId>> = BTreeMap::new();
        for &label in labels {
            let Ok(paths) = taxonomy.paths_to_root(label) else {
                warn!("label {label} not in taxonomy, skipped");
                continue;
            };
            for path in paths {
                let mut parent = NodeId::Root;
                for &c in &path {
                    bits.entry(parent).or_default().insert(c);
                    parent = NodeId::Cwe(c);
                }
            }
        }
        for (node, on) in bits {
            let targets: Vec<bool> = taxonomy
                .children_of(node)
                .iter()
                .map(|c| on.contains(c))
                .collect();
            out.entry(node)
                .or_default()
                .push(Example::new(fv.clone(), targets));
        }
    }
    out
}

/// Per-node generator seed derived from the run seed.
pub fn node_seed(seed: u64, node: NodeId) -> u64 {
    let salt = match node {
        NodeId::Root => 0,
        NodeId::Cwe(c) => u64::from(c.0) + 1,
    };
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Text processing shared by every training variant.
struct Prepared {
    labeled: Vec<(FeatureVector, BTreeSet<CweId>)>,
    cve_counts: Vec<BTreeMap<TermId, u64>>,
    cwe_counts: BTreeMap<CweId, BTreeMap<TermId, u64>>,
    dictionary: Dictionary,
}

fn prepare(
    corpus: &[CveRecord],
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
) -> Result<Prepared> {
    config.train.validate()?;
    let labeled: Vec<(&CveRecord, BTreeSet<CweId>)> = corpus
        .iter()
        .filter(|r| r.is_labeled())
        .map(|r| (r, resolve_labels(r, taxonomy)))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if labeled.is_empty() {
        return Err(Error::Config(
            "no training record has a label present in the taxonomy".into(),
        ));
    }
    let cve_tokens: Vec<TokenSequence> = labeled
        .par_iter()
        .map(|(r, _)| preprocessor.run(&r.description))
        .collect();
    let cwe_tokens: BTreeMap<CweId, TokenSequence> = taxonomy
        .nodes()
        .map(|n| (n.id, preprocessor.run(&n.text())))
        .collect();
    let all_docs: Vec<TokenSequence> = cve_tokens
        .iter()
        .chain(cwe_tokens.values())
        .cloned()
        .collect();
    let dictionary = build_dictionary(&all_docs, config.min_count)?;
    info!(
        "{} labeled records, dictionary of {} terms (min count {})",
        labeled.len(),
        dictionary.len(),
        config.min_count
    );

    let cve_counts: Vec<_> = cve_tokens
        .par_iter()
        .map(|t| dictionary_counts(t, &dictionary))
        .collect();
    let cwe_counts = cwe_tokens
        .iter()
        .map(|(id, t)| (*id, dictionary_counts(t, &dictionary)))
        .collect();
    let labeled = cve_tokens
        .iter()
        .zip(labeled)
        .map(|(t, (_, l))| (dictionary.encode_tokens(t), l))
        .collect();
    Ok(Prepared {
        labeled,
        cve_counts,
        cwe_counts,
        dictionary,
    })
}

/// TF-IDF initial weights for every internal node.
fn tfidf_initial_weights<T: Scalar>(
    prep: &Prepared,
    taxonomy: &Taxonomy,
    scope: IdfScope,
) -> Result<BTreeMap<NodeId, Matrix<T>>> {
    // CVE indices under each CWE node (labeled at the node or below it).
    let mut subtree: BTreeMap<CweId, BTreeSet<usize>> = BTreeMap::new();
    for (i, (_, labels)) in prep.labeled.iter().enumerate() {
        for &l in labels {
            for a in taxonomy.ancestors_or_self(l) {
                subtree.entry(a).or_default().insert(i);
            }
        }
    }
    let empty = BTreeSet::new();
    let nodes: Vec<NodeId> = taxonomy.internal_nodes().collect();
    nodes
        .par_iter()
        .map(|&node| {
            let children = taxonomy.children_of(node);
            let class_docs: BTreeMap<CweId, ClassDocument> = children
                .iter()
                .map(|&g| {
                    let cves = subtree.get(&g).unwrap_or(&empty);
                    let maps = std::iter::once(&prep.cwe_counts[&g])
                        .chain(cves.iter().map(|&i| &prep.cve_counts[i]));
                    (g, ClassDocument::from_count_maps(g, maps))
                })
                .collect();
            let df = match scope {
                IdfScope::PerChild => DocumentFrequencies::from_documents(class_docs.values()),
                IdfScope::PerInstance => {
                    let cves: BTreeSet<usize> = children
                        .iter()
                        .flat_map(|g| subtree.get(g).unwrap_or(&empty).iter().copied())
                        .collect();
                    let docs: Vec<ClassDocument> = children
                        .iter()
                        .map(|&g| ClassDocument::new(g, prep.cwe_counts[&g].clone()))
                        .chain(cves.iter().map(|&i| ClassDocument::new(CweId(0), prep.cve_counts[i].clone())))
                        .collect();
                    DocumentFrequencies::from_documents(&docs)
                }
            };
            let w = init_weights_with(children, &prep.dictionary, &class_docs, &df)?;
            Ok((node, w))
        })
        .collect()
}

/// Trains every network that has examples, in parallel; others are kept
/// as initialized.
type NodeOutcome<T> = (NodeId, NodeNet<T>, Option<TrainingLog>);

fn train_all<T: Scalar>(
    nets: BTreeMap<NodeId, NodeNet<T>>,
    sets: &BTreeMap<NodeId, Vec<Example>>,
    cfg: &TrainConfig,
) -> Result<Trained<T>> {
    let jobs: Vec<(NodeId, NodeNet<T>)> = nets.into_iter().collect();
    let results: Vec<Result<NodeOutcome<T>>> = jobs
        .into_par_iter()
        .map(|(node, mut net)| {
            let examples = sets.get(&node).map_or(&[][..], Vec::as_slice);
            if examples.is_empty() {
                return Ok((node, net, None));
            }
            let node_cfg = TrainConfig {
                seed: node_seed(cfg.seed, node),
                ..cfg.clone()
            };
            let log = fit(&mut net, examples, &node_cfg)
                .map_err(|e| Error::Training(format!("{node}: {e}")))?;
            Ok((node, net, Some(log)))
        })
        .collect();
    let mut out = Trained {
        nets: BTreeMap::new(),
        training: BTreeMap::new(),
        logs: BTreeMap::new(),
    };
    for r in results {
        let (node, net, log) = r?;
        let examples = sets.get(&node).map_or(0, Vec::len);
        let epochs = log.as_ref().map_or(0, TrainingLog::epochs);
        out.nets.insert(node, net);
        out.training.insert(node, NodeTraining { examples, epochs });
        if let Some(log) = log {
            out.logs.insert(node, log);
        }
    }
    Ok(out)
}

struct Trained<T> {
    nets: BTreeMap<NodeId, NodeNet<T>>,
    training: BTreeMap<NodeId, NodeTraining>,
    logs: BTreeMap<NodeId, TrainingLog>,
}

/// Per-node loss curves of a training run.
pub type TrainingLogs = BTreeMap<NodeId, TrainingLog>;

/// Trains the TF-IDF-initialized single-layer hierarchy.
pub fn train_hierarchy<T: Scalar>(
    corpus: &[CveRecord],
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
) -> Result<HierarchicalModel<T>> {
    Ok(train_model_logged(ModelKind::Hierarchical, corpus, taxonomy, preprocessor, config)?.0)
}

/// Hierarchy of randomly initialized two-layer networks.
pub fn train_two_layer_baseline<T: Scalar>(
    corpus: &[CveRecord],
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
    hidden_size: usize,
) -> Result<HierarchicalModel<T>> {
    let kind = ModelKind::TwoLayer { hidden_size };
    Ok(train_model_logged(kind, corpus, taxonomy, preprocessor, config)?.0)
}

/// One randomly initialized single-layer network over all classes, trained
/// with multi-hot targets covering each label and its ancestors.
pub fn train_flat_baseline<T: Scalar>(
    corpus: &[CveRecord],
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
) -> Result<HierarchicalModel<T>> {
    Ok(train_model_logged(ModelKind::Flat, corpus, taxonomy, preprocessor, config)?.0)
}

/// Dispatches on `kind`.
pub fn train_model<T: Scalar>(
    kind: ModelKind,
    corpus: &[CveRecord],
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
) -> Result<HierarchicalModel<T>> {
    Ok(train_model_logged(kind, corpus, taxonomy, preprocessor, config)?.0)
}

/// [`train_model`] that also returns each trained node's loss curve.
pub fn train_model_logged<T: Scalar>(
    kind: ModelKind,
    corpus: &[CveRecord],
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
) -> Result<(HierarchicalModel<T>, TrainingLogs)> {
    if let ModelKind::TwoLayer { hidden_size: 0 } = kind {
        return Err(Error::Config("hidden_size must be positive".into()));
    }
    let prep = prepare(corpus, taxonomy, preprocessor, config)?;
    let nets = initial_networks(kind, &prep, taxonomy, config)?;
    finish(kind, nets, prep, taxonomy, preprocessor, config)
}

fn random_rng(seed: u64, node: NodeId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(node_seed(seed, node) ^ 0x5EED)
}

fn initial_networks<T: Scalar>(
    kind: ModelKind,
    prep: &Prepared,
    taxonomy: &Taxonomy,
    config: &PipelineConfig,
) -> Result<BTreeMap<NodeId, NodeNet<T>>> {
    let fp = prep.dictionary.fingerprint();
    let dim = prep.dictionary.len();
    let seed = config.train.seed;
    let mut nets = BTreeMap::new();
    match kind {
        ModelKind::Hierarchical => {
            let initial = match config.init {
                WeightInit::TfIdf => tfidf_initial_weights::<T>(prep, taxonomy, config.idf_scope)?,
                WeightInit::Random => taxonomy
                    .internal_nodes()
                    .map(|node| {
                        let w = Matrix::glorot(dim, taxonomy.children_of(node).len(), &mut random_rng(seed, node));
                        (node, w)
                    })
                    .collect(),
            };
            for (node, w) in initial {
                let clf = NodeClassifier::new(node, taxonomy.children_of(node).to_vec(), w, fp.clone())?;
                nets.insert(node, NodeNet::Linear(clf));
            }
        }
        ModelKind::TwoLayer { hidden_size } => {
            for node in taxonomy.internal_nodes() {
                let net = TwoLayerClassifier::random(
                    node,
                    taxonomy.children_of(node).to_vec(),
                    dim,
                    hidden_size,
                    fp.clone(),
                    &mut random_rng(seed, node),
                );
                nets.insert(node, NodeNet::TwoLayer(net));
            }
        }
        ModelKind::Flat => {
            let classes = flat_classes(&prep.labeled, taxonomy);
            let w = Matrix::glorot(dim, classes.len(), &mut random_rng(seed, NodeId::Root));
            let clf = NodeClassifier::new(NodeId::Root, classes, w, fp)?;
            nets.insert(NodeId::Root, NodeNet::Linear(clf));
        }
    }
    Ok(nets)
}

fn finish<T: Scalar>(
    kind: ModelKind,
    nets: BTreeMap<NodeId, NodeNet<T>>,
    prep: Prepared,
    taxonomy: &Taxonomy,
    preprocessor: &Preprocessor,
    config: &PipelineConfig,
) -> Result<(HierarchicalModel<T>, TrainingLogs)> {
    let sets = match kind {
        ModelKind::Flat => flat_training_set(&prep, taxonomy, &nets),
        _ => assemble_training_sets(&prep.labeled, taxonomy),
    };
    let t = train_all(nets, &sets, &config.train)?;
    let model = HierarchicalModel {
        kind,
        taxonomy: taxonomy.clone(),
        preprocessor: preprocessor.clone(),
        dictionary: prep.dictionary,
        classifiers: t.nets,
        training: t.training,
        config: config.clone(),
    };
    Ok((model, t.logs))
}

/// Classes of the flat baseline: every resolved label and its ancestors.
fn flat_classes(labeled: &[(FeatureVector, BTreeSet<CweId>)], taxonomy: &Taxonomy) -> Vec<CweId> {
    let set: BTreeSet<CweId> = labeled
        .iter()
        .flat_map(|(_, ls)| ls.iter())
        .flat_map(|&l| taxonomy.ancestors_or_self(l))
        .collect();
    set.into_iter().collect()
}

/// Multi-hot targets over the flat classifier's outputs: each label and its
/// ancestors.
fn flat_training_set<T: Scalar>(
    prep: &Prepared,
    taxonomy: &Taxonomy,
    nets: &BTreeMap<NodeId, NodeNet<T>>,
) -> BTreeMap<NodeId, Vec<Example>> {
    let classes = nets[&NodeId::Root].child_ids();
    let examples = prep
        .labeled
        .iter()
        .map(|(fv, labels)| {
            let on: BTreeSet<CweId> = labels.iter().flat_map(|&l| taxonomy.ancestors_or_self(l)).collect();
            Example::new(fv.clone(), classes.iter().map(|c| on.contains(c)).collect())
        })
        .collect();
    BTreeMap::from([(NodeId::Root, examples)])
}

#[cfg(test)]
mod tests;

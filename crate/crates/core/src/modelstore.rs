//! Model directories: `manifest.json`, `dictionary.tsv`, `taxonomy.json`
//! and one row-major little-endian f64 file per weight matrix under
//! `weights/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Dictionary;
use crate::fingerprint::content_hash;
use crate::hierarchy::{HierarchicalModel, ModelKind, NodeNet, NodeTraining, PipelineConfig};
use crate::ingest::{CweId, NodeId, Taxonomy};
use crate::matrix::Matrix;
use crate::netcore::{NodeClassifier, TwoLayerClassifier};
use crate::scalar::Scalar;
use crate::textprep::{Preprocessor, Stopwords, SynonymGroup, SynonymTable};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DICTIONARY_FILE: &str = "dictionary.tsv";
pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const WEIGHTS_DIR: &str = "weights";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerEntry {
    /// Path relative to the model directory.
    pub file: String,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub node_id: NodeId,
    pub child_ids: Vec<CweId>,
    /// Input-side layer first.
    pub layers: Vec<LayerEntry>,
    pub examples: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessingAssets {
    pub stopwords: Vec<String>,
    /// Stemmed groups.
    pub synonyms: Vec<SynonymGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub model_fingerprint: String,
    pub dictionary_fingerprint: String,
    pub taxonomy_fingerprint: String,
    pub preprocessing_fingerprint: String,
    pub config: PipelineConfig,
    pub preprocessing: PreprocessingAssets,
    pub nodes: Vec<NodeEntry>,
}

fn layer_file(node: NodeId, index: usize, n_layers: usize) -> String {
    if index + 1 == n_layers {
        format!("{WEIGHTS_DIR}/{node}.f64le")
    } else {
        format!("{WEIGHTS_DIR}/{node}.layer{index}.f64le")
    }
}

fn matrix_bytes<T: Scalar>(m: &Matrix<T>) -> Vec<u8> {
    m.as_slice().iter().flat_map(|v| v.as_f64().to_le_bytes()).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `model` into `dir`, creating it if needed.
pub fn save<T: Scalar>(model: &HierarchicalModel<T>, dir: impl AsRef<Path>) -> Result<ModelManifest> {
    let dir = dir.as_ref();
    let wdir = dir.join(WEIGHTS_DIR);
    fs::create_dir_all(&wdir).map_err(|e| Error::io(&wdir, e))?;

    let mut nodes = Vec::with_capacity(model.classifiers.len());
    for (&node, net) in &model.classifiers {
        let layers = net.layers();
        let mut entries = Vec::with_capacity(layers.len());
        for (i, m) in layers.iter().enumerate() {
            let file = layer_file(node, i, layers.len());
            let bytes = matrix_bytes(m);
            write(&dir.join(&file), &bytes)?;
            entries.push(LayerEntry {
                file,
                rows: m.rows(),
                cols: m.cols(),
                sha256: content_hash(&bytes),
            });
        }
        let t = model.training.get(&node).copied().unwrap_or_default();
        nodes.push(NodeEntry {
            node_id: node,
            child_ids: net.child_ids().to_vec(),
            layers: entries,
            examples: t.examples,
            epochs: t.epochs,
        });
    }

    let tsv = model.dictionary.to_tsv();
    write(&dir.join(DICTIONARY_FILE), tsv.as_bytes())?;
    let tax = model.taxonomy.to_json();
    write(&dir.join(TAXONOMY_FILE), tax.as_bytes())?;

    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        kind: model.kind,
        model_fingerprint: model.fingerprint(),
        dictionary_fingerprint: model.dictionary.fingerprint(),
        taxonomy_fingerprint: model.taxonomy.fingerprint(),
        preprocessing_fingerprint: model.preprocessor.fingerprint(),
        config: model.config.clone(),
        preprocessing: PreprocessingAssets {
            stopwords: model.preprocessor.stopwords.iter().map(str::to_string).collect(),
            synonyms: model.preprocessor.synonyms.groups().to_vec(),
        },
        nodes,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write(&dir.join(MANIFEST_FILE), json.as_bytes())?;
    Ok(manifest)
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(integrity(format!("missing file {}", path.display())));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_hash(what: &Path, bytes: &[u8], expected: &str) -> Result<()> {
    if content_hash(bytes) != expected {
        return Err(integrity(format!("{} does not match its recorded fingerprint", what.display())));
    }
    Ok(())
}

/// Reads and version-checks `manifest.json`.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<ModelManifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| integrity(format!("{}: {e}", path.display())))?;
    let version = value.get("format_version").and_then(serde_json::Value::as_u64);
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(Error::Version {
            found: version.map_or(0, |v| u32::try_from(v).unwrap_or(u32::MAX)),
            supported: FORMAT_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| integrity(format!("{}: {e}", path.display())))
}

fn read_matrix<T: Scalar>(dir: &Path, entry: &LayerEntry) -> Result<Matrix<T>> {
    let path: PathBuf = dir.join(&entry.file);
    let bytes = read(&path)?;
    let expected = entry.rows * entry.cols * 8;
    if bytes.len() != expected {
        return Err(integrity(format!(
            "{}: {} bytes, expected {expected} for a {}x{} matrix",
            path.display(),
            bytes.len(),
            entry.rows,
            entry.cols
        )));
    }
    check_hash(&path, &bytes, &entry.sha256)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Matrix::from_vec(entry.rows, entry.cols, data)
        .ok_or_else(|| integrity(format!("{}: bad matrix shape", path.display())))
}

/// Restores a model saved by [`save`], verifying every file and fingerprint.
pub fn load<T: Scalar>(dir: impl AsRef<Path>) -> Result<HierarchicalModel<T>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;

    let dict_path = dir.join(DICTIONARY_FILE);
    let tsv = read(&dict_path)?;
    check_hash(&dict_path, &tsv, &manifest.dictionary_fingerprint)?;
    let tsv = String::from_utf8(tsv).map_err(|_| integrity("dictionary.tsv is not UTF-8"))?;
    let dictionary = Dictionary::from_tsv(&tsv, manifest.config.min_count)?;

    let tax_path = dir.join(TAXONOMY_FILE);
    let tax = String::from_utf8(read(&tax_path)?).map_err(|_| integrity("taxonomy.json is not UTF-8"))?;
    let taxonomy = Taxonomy::from_json(&tax)?;
    if taxonomy.fingerprint() != manifest.taxonomy_fingerprint {
        return Err(integrity(format!(
            "{} does not match its recorded fingerprint",
            tax_path.display()
        )));
    }

    let stopwords = Stopwords::from_words(manifest.preprocessing.stopwords.iter().cloned());
    let synonyms = SynonymTable::new(manifest.preprocessing.synonyms.clone())?;
    let preprocessor = Preprocessor::new(stopwords, synonyms);
    if preprocessor.fingerprint() != manifest.preprocessing_fingerprint {
        return Err(integrity("preprocessing assets do not match their recorded fingerprint"));
    }

    let dict_fp = dictionary.fingerprint();
    let mut classifiers = BTreeMap::new();
    let mut training = BTreeMap::new();
    for entry in &manifest.nodes {
        let node = entry.node_id;
        if manifest.kind != ModelKind::Flat && taxonomy.children_of(node) != entry.child_ids.as_slice() {
            return Err(integrity(format!("{node}: child list disagrees with the taxonomy")));
        }
        let first_rows = entry.layers.first().map(|l| l.rows);
        if first_rows != Some(dictionary.len()) {
            return Err(integrity(format!(
                "{node}: input dimension {first_rows:?} differs from dictionary size {}",
                dictionary.len()
            )));
        }
        let net = match (manifest.kind, entry.layers.as_slice()) {
            (ModelKind::TwoLayer { .. }, [h, o]) => NodeNet::TwoLayer(TwoLayerClassifier::new(
                node,
                entry.child_ids.clone(),
                read_matrix(dir, h)?,
                read_matrix(dir, o)?,
                dict_fp.clone(),
            )?),
            (ModelKind::Hierarchical | ModelKind::Flat, [w]) => NodeNet::Linear(NodeClassifier::new(
                node,
                entry.child_ids.clone(),
                read_matrix(dir, w)?,
                dict_fp.clone(),
            )?),
            _ => {
                return Err(integrity(format!(
                    "{node}: {} layers listed for a {:?} model",
                    entry.layers.len(),
                    manifest.kind
                )))
            }
        };
        if classifiers.insert(node, net).is_some() {
            return Err(integrity(format!("{node} listed twice")));
        }
        training.insert(
            node,
            NodeTraining {
                examples: entry.examples,
                epochs: entry.epochs,
            },
        );
    }

    let model = HierarchicalModel {
        kind: manifest.kind,
        taxonomy,
        preprocessor,
        dictionary,
        classifiers,
        training,
        config: manifest.config,
    };
    if model.fingerprint() != manifest.model_fingerprint {
        return Err(integrity("model does not match its recorded fingerprint"));
    }
    Ok(model)
}

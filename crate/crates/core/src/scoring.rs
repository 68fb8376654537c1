//! Augmented term frequency, smoothed inverse document frequency and the
//! TF-IDF weight matrices used to seed node classifiers.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::features::{ngram_counts, Dictionary};
use crate::ingest::CweId;
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::textprep::TokenSequence;

/// Dictionary position of a term.
pub type TermId = usize;

/// Term occurrence counts of the text that describes one class (or, for
/// instance-level IDF, one text belonging to that class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDocument {
    pub node_id: CweId,
    term_counts: BTreeMap<TermId, u64>,
    max_count: u64,
}

impl ClassDocument {
    pub fn new(node_id: CweId, mut term_counts: BTreeMap<TermId, u64>) -> Self {
        term_counts.retain(|_, c| *c > 0);
        let max_count = term_counts.values().copied().max().unwrap_or(0);
        Self {
            node_id,
            term_counts,
            max_count,
        }
    }

    /// Counts the dictionary n-grams of each text and sums them.
    pub fn from_texts<'a>(
        node_id: CweId,
        texts: impl IntoIterator<Item = &'a TokenSequence>,
        dict: &Dictionary,
    ) -> Self {
        let maps: Vec<_> = texts.into_iter().map(|t| dictionary_counts(t, dict)).collect();
        Self::from_count_maps(node_id, &maps)
    }

    /// Sums per-text count maps into one document.
    pub fn from_count_maps<'a>(
        node_id: CweId,
        maps: impl IntoIterator<Item = &'a BTreeMap<TermId, u64>>,
    ) -> Self {
        let mut counts = BTreeMap::new();
        for m in maps {
            for (&t, &c) in m {
                *counts.entry(t).or_insert(0) += c;
            }
        }
        Self::new(node_id, counts)
    }

    pub fn count(&self, t: TermId) -> u64 {
        self.term_counts.get(&t).copied().unwrap_or(0)
    }

    pub fn contains(&self, t: TermId) -> bool {
        self.term_counts.contains_key(&t)
    }

    pub fn max_count(&self) -> u64 {
        self.max_count
    }

    pub fn terms(&self) -> impl Iterator<Item = (TermId, u64)> + '_ {
        self.term_counts.iter().map(|(&t, &c)| (t, c))
    }

    pub fn is_empty(&self) -> bool {
        self.term_counts.is_empty()
    }
}

/// Occurrence counts of the dictionary n-grams in one token sequence.
pub fn dictionary_counts(tokens: &TokenSequence, dict: &Dictionary) -> BTreeMap<TermId, u64> {
    let mut counts = BTreeMap::new();
    for (term, c) in ngram_counts(tokens) {
        if let Some(pos) = dict.position(&term) {
            *counts.entry(pos).or_insert(0) += c;
        }
    }
    counts
}

/// `0.5 + 0.5 * f / max_f` for a present term, 0 for an absent one.
pub fn term_frequency<T: Scalar>(t: TermId, doc: &ClassDocument) -> T {
    let f = doc.count(t);
    if f == 0 || doc.max_count == 0 {
        return T::zero();
    }
    let half = T::from_f64_lossy(0.5);
    half + half * T::from_u64(f).unwrap() / T::from_u64(doc.max_count).unwrap()
}

/// Document frequencies over a fixed collection, for repeated IDF lookups.
#[derive(Debug, Clone)]
pub struct DocumentFrequencies {
    n_docs: usize,
    df: HashMap<TermId, usize>,
}

impl DocumentFrequencies {
    pub fn new(docs: &[ClassDocument]) -> Self {
        Self::from_documents(docs)
    }

    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a ClassDocument>) -> Self {
        let mut df = HashMap::new();
        let mut n_docs = 0;
        for d in docs {
            n_docs += 1;
            for (t, _) in d.terms() {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Self { n_docs, df }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, t: TermId) -> usize {
        self.df.get(&t).copied().unwrap_or(0)
    }

    /// `log10(M / (1 + df))` when `df < M`, otherwise 0.
    pub fn idf<T: Scalar>(&self, t: TermId) -> T {
        let df = self.df(t);
        if self.n_docs == 0 || df >= self.n_docs {
            return T::zero();
        }
        let m = T::from_usize(self.n_docs).unwrap();
        let denom = T::from_usize(1 + df).unwrap();
        (m / denom).log10()
    }
}

pub fn inverse_document_frequency<T: Scalar>(t: TermId, docs: &[ClassDocument]) -> T {
    DocumentFrequencies::new(docs).idf(t)
}

pub fn tfidf<T: Scalar>(t: TermId, doc: &ClassDocument, docs: &[ClassDocument]) -> T {
    term_frequency::<T>(t, doc) * inverse_document_frequency::<T>(t, docs)
}

/// Which collection supplies the IDF statistics at a decision node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdfScope {
    /// One document per child class (M = number of children).
    PerChild,
    /// One document per text under the node: each child's CWE text and
    /// each training CVE in the children's subtrees.
    #[default]
    PerInstance,
}

/// D x C matrix with `w[k][g] = tf(t_k, doc_g) * idf(t_k)`.
///
/// `idf_corpus` is the collection IDF is computed over; pass the class
/// documents themselves for per-child IDF.
pub fn init_weights<T: Scalar>(
    children: &[CweId],
    dict: &Dictionary,
    class_docs: &BTreeMap<CweId, ClassDocument>,
    idf_corpus: &[ClassDocument],
) -> Result<Matrix<T>> {
    init_weights_with(children, dict, class_docs, &DocumentFrequencies::new(idf_corpus))
}

/// [`init_weights`] with precomputed document frequencies.
pub fn init_weights_with<T: Scalar>(
    children: &[CweId],
    dict: &Dictionary,
    class_docs: &BTreeMap<CweId, ClassDocument>,
    df: &DocumentFrequencies,
) -> Result<Matrix<T>> {
    let mut w = Matrix::zeros(dict.len(), children.len());
    for (g, child) in children.iter().enumerate() {
        let doc = class_docs
            .get(child)
            .ok_or_else(|| Error::Config(format!("no class document for {child}")))?;
        for (t, _) in doc.terms() {
            if t >= dict.len() {
                return Err(Error::Dimension(format!(
                    "term {t} outside dictionary of size {}",
                    dict.len()
                )));
            }
            w[(t, g)] = term_frequency::<T>(t, doc) * df.idf::<T>(t);
        }
    }
    Ok(w)
}

/// [`init_weights`] with IDF taken over the children's own documents.
pub fn init_weights_per_child<T: Scalar>(
    children: &[CweId],
    dict: &Dictionary,
    class_docs: &BTreeMap<CweId, ClassDocument>,
) -> Result<Matrix<T>> {
    let docs = children
        .iter()
        .map(|c| {
            class_docs
                .get(c)
                .cloned()
                .ok_or_else(|| Error::Config(format!("no class document for {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    init_weights(children, dict, class_docs, &docs)
}

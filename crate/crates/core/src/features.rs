//! N-gram terms, the filtered term dictionary, and multi-hot feature vectors.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::fingerprint::content_hash;
use crate::textprep::TokenSequence;

/// N-gram orders used for features.
pub const NGRAM_ORDERS: [usize; 3] = [1, 2, 3];

/// Default minimum occurrence count for a dictionary term.
pub const DEFAULT_MIN_COUNT: u64 = 3;

/// Contiguous windows of `n` tokens joined by single spaces, in order and
/// with repeats.
pub fn ngrams(tokens: &TokenSequence, n: usize) -> Vec<String> {
    assert!(n >= 1, "n-gram order must be positive");
    tokens.tokens().windows(n).map(|w| w.join(" ")).collect()
}

/// Unique 1-, 2- and 3-grams of a sequence.
pub fn ngram_set(tokens: &TokenSequence) -> BTreeSet<String> {
    NGRAM_ORDERS
        .iter()
        .flat_map(|&n| ngrams(tokens, n))
        .collect()
}

/// Occurrence counts of every 1-, 2- and 3-gram in a sequence.
pub fn ngram_counts(tokens: &TokenSequence) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for n in NGRAM_ORDERS {
        for g in ngrams(tokens, n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Term index defining the feature space.
///
/// Positions run `0..len()`, ordered by descending corpus count with ties
/// broken lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dictionary {
    terms: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
    min_count: u64,
}

impl Dictionary {
    fn from_sorted(entries: Vec<(String, u64)>, min_count: u64) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (terms, counts) = entries.into_iter().unzip();
        Self {
            terms,
            counts,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    pub fn term(&self, pos: usize) -> &str {
        &self.terms[pos]
    }

    pub fn count(&self, pos: usize) -> u64 {
        self.counts[pos]
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// Encodes a token sequence through its n-gram set.
    pub fn encode_tokens(&self, tokens: &TokenSequence) -> FeatureVector {
        encode(ngram_set(tokens).iter().map(String::as_str), self)
    }

    /// `position<TAB>term<TAB>count` lines in position order.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, (t, c)) in self.terms.iter().zip(&self.counts).enumerate() {
            s.push_str(&format!("{i}\t{t}\t{c}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str, min_count: u64) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Format(format!("dictionary line {}: {what}", i + 1));
            let mut cols = line.split('\t');
            let (Some(pos), Some(term), Some(count), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected three tab-separated columns"));
            };
            let pos: usize = pos.parse().map_err(|_| bad("bad position"))?;
            if pos != entries.len() {
                return Err(bad("positions must be contiguous from 0"));
            }
            let count: u64 = count.parse().map_err(|_| bad("bad count"))?;
            entries.push((term.to_string(), count));
        }
        let dict = Self::from_sorted(entries, min_count);
        if dict.index.len() != dict.terms.len() {
            return Err(Error::Format("dictionary has duplicate terms".into()));
        }
        Ok(dict)
    }

    /// Content hash of the TSV export.
    pub fn fingerprint(&self) -> String {
        content_hash(self.to_tsv().as_bytes())
    }
}

/// Builds the dictionary from training texts: every 1/2/3-gram occurrence
/// is counted over the whole set and terms seen fewer than `min_count` times
/// are dropped.
pub fn build_dictionary(docs: &[TokenSequence], min_count: u64) -> Result<Dictionary> {
    if min_count == 0 {
        return Err(Error::Config("dictionary threshold must be >= 1".into()));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for d in docs {
        for (t, c) in ngram_counts(d) {
            *counts.entry(t).or_insert(0) += c;
        }
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Dictionary::from_sorted(entries, min_count))
}

/// Binary bag of dictionary terms, stored as sorted "on" positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    dimension: usize,
    on: Vec<usize>,
}

impl FeatureVector {
    pub fn new(dimension: usize, positions: impl IntoIterator<Item = usize>) -> Result<Self> {
        let on: BTreeSet<usize> = positions.into_iter().collect();
        if let Some(&bad) = on.iter().find(|&&p| p >= dimension) {
            return Err(Error::Dimension(format!(
                "position {bad} outside dimension {dimension}"
            )));
        }
        Ok(Self {
            dimension,
            on: on.into_iter().collect(),
        })
    }

    pub fn zeros(dimension: usize) -> Self {
        Self {
            dimension,
            on: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn on_positions(&self) -> &[usize] {
        &self.on
    }

    pub fn nnz(&self) -> usize {
        self.on.len()
    }

    pub fn get(&self, k: usize) -> bool {
        self.on.binary_search(&k).is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dimension];
        for &k in &self.on {
            v[k] = 1.0;
        }
        v
    }
}

/// Sets a 1 at the position of every term present in the dictionary; other
/// terms are ignored.
pub fn encode<'a>(terms: impl IntoIterator<Item = &'a str>, dict: &Dictionary) -> FeatureVector {
    let on: BTreeSet<usize> = terms.into_iter().filter_map(|t| dict.position(t)).collect();
    FeatureVector {
        dimension: dict.len(),
        on: on.into_iter().collect(),
    }
}

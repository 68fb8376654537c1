//! Seeded synthetic taxonomies and corpora with vocabulary-disjoint leaves.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{CveRecord, CweId, CweNode, NodeId, Taxonomy};
use crate::textprep::{stem, Stopwords};

const FIRST_ID: u32 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Levels below the virtual root.
    pub depth: usize,
    pub branching: usize,
    pub docs_per_leaf: usize,
    pub vocab_per_leaf: usize,
    pub words_per_doc: usize,
    /// Probability that a word is drawn from another leaf's vocabulary.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            branching: 2,
            docs_per_leaf: 50,
            vocab_per_leaf: 200,
            words_per_doc: 12,
            noise: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub taxonomy: Taxonomy,
    pub corpus: Vec<CveRecord>,
    pub leaf_vocab: BTreeMap<CweId, Vec<String>>,
}

impl SynthData {
    pub fn leaves(&self) -> impl Iterator<Item = CweId> + '_ {
        self.leaf_vocab.keys().copied()
    }
}

/// Lowercase pseudo-words that are their own Snowball stem and not
/// stopwords, in a fixed order.
pub fn pseudo_words(n: usize) -> Vec<String> {
    const C: &[u8] = b"bdfgkmnprtvz";
    const V: &[u8] = b"aou";
    let sw = Stopwords::english();
    let mut out = Vec::with_capacity(n);
    let mut seen = BTreeSet::new();
    'outer: for &c1 in C {
        for &v1 in V {
            for &c2 in C {
                for &v2 in V {
                    for &c3 in C {
                        if out.len() == n {
                            break 'outer;
                        }
                        let w = String::from_utf8(vec![c1, v1, c2, v2, c3]).unwrap();
                        if stem(&w) == w && !sw.contains(&w) && seen.insert(w.clone()) {
                            out.push(w);
                        }
                    }
                }
            }
        }
    }
    assert_eq!(out.len(), n, "pseudo-word space exhausted");
    out
}

/// Draws a description of `n` words for `leaf`, with cross-leaf noise.
pub fn draw_text<R: Rng + ?Sized>(
    data: &SynthData,
    leaf: CweId,
    n: usize,
    noise: f64,
    rng: &mut R,
) -> String {
    let own = &data.leaf_vocab[&leaf];
    let others: Vec<&Vec<String>> = data
        .leaf_vocab
        .iter()
        .filter(|(id, _)| **id != leaf)
        .map(|(_, v)| v)
        .collect();
    let words: Vec<&str> = (0..n)
        .map(|_| {
            let pool = if !others.is_empty() && rng.gen_bool(noise) {
                others.choose(rng).unwrap()
            } else {
                own
            };
            pool.choose(rng).unwrap().as_str()
        })
        .collect();
    words.join(" ")
}

/// Builds a full `branching`-ary taxonomy of `depth` levels and
/// `docs_per_leaf` single-label CVEs per leaf. Internal descriptions hold
/// the union of their subtree's vocabulary.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.depth == 0 || cfg.branching == 0 || cfg.vocab_per_leaf == 0 || cfg.words_per_doc == 0 {
        return Err(Error::Config("synthetic sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Config(format!("noise must lie in [0, 1], got {}", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // level-order ids; parent of each node
    let mut levels: Vec<Vec<(CweId, NodeId)>> = Vec::new();
    let mut next = FIRST_ID;
    let mut parents = vec![NodeId::Root];
    for _ in 0..cfg.depth {
        let mut level = Vec::new();
        for &p in &parents {
            for _ in 0..cfg.branching {
                level.push((CweId(next), p));
                next += 1;
            }
        }
        parents = level.iter().map(|(id, _)| NodeId::Cwe(*id)).collect();
        levels.push(level);
    }

    let leaves: Vec<CweId> = levels.last().unwrap().iter().map(|(id, _)| *id).collect();
    let mut pool = pseudo_words(leaves.len() * cfg.vocab_per_leaf);
    pool.shuffle(&mut rng);
    let leaf_vocab: BTreeMap<CweId, Vec<String>> = leaves
        .iter()
        .zip(pool.chunks(cfg.vocab_per_leaf))
        .map(|(id, words)| (*id, words.to_vec()))
        .collect();

    // subtree vocabulary, leaves upward
    let mut vocab: BTreeMap<CweId, Vec<String>> = leaf_vocab.clone();
    for level in levels.iter().rev() {
        for (id, parent) in level {
            if let NodeId::Cwe(p) = parent {
                let words = vocab[id].clone();
                vocab.entry(*p).or_default().extend(words);
            }
        }
    }

    let nodes = levels
        .iter()
        .flatten()
        .map(|(id, parent)| {
            let parents: Vec<u32> = parent.cwe().map(|p| p.0).into_iter().collect();
            CweNode::new(id.0, &format!("synthetic class {}", id.0), &vocab[id].join(" "), &parents)
        })
        .collect();
    let taxonomy = Taxonomy::new(nodes)?;

    let mut data = SynthData {
        taxonomy,
        corpus: Vec::new(),
        leaf_vocab,
    };
    let mut corpus = Vec::with_capacity(leaves.len() * cfg.docs_per_leaf);
    for (li, &leaf) in leaves.iter().enumerate() {
        for d in 0..cfg.docs_per_leaf {
            let text = draw_text(&data, leaf, cfg.words_per_doc, cfg.noise, &mut rng);
            let id = format!("CVE-2020-{}", 10_000 + li * cfg.docs_per_leaf + d);
            corpus.push(CveRecord::new(&id, &text, &[leaf.to_string()])?);
        }
    }
    data.corpus = corpus;
    Ok(data)
}

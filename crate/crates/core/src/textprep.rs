//! Description normalization: lowercasing, stopword filtering, cleaning,
//! Snowball stemming and synonym coding, applied in that order.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::ingest::read_to_string;

const ENGLISH_STOPWORDS: &str = include_str!("stopwords_en.txt");
const DEFAULT_SYNONYMS: &str = include_str!("synonyms_default.json");

/// Longest synonym phrase, in tokens.
pub const MAX_PHRASE_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Stopwords(BTreeSet<String>);

impl Stopwords {
    /// The packaged English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    /// One token per line; `#` starts a comment.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self(words.into_iter().map(|w| w.into().to_lowercase()).collect())
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

pub fn load_stopwords(path: impl AsRef<Path>) -> Result<Stopwords> {
    Ok(Stopwords::parse(&read_to_string(path.as_ref())?))
}

/// Normalized token sequence. Tokens are non-empty, lowercase, and contain
/// only letters, digits and internal hyphens.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Snowball (Porter2) English stem of a lowercase token.
pub fn stem(token: &str) -> String {
    stemmer().stem(token).into_owned()
}

/// Lowercases and splits on every character that is not a letter, digit or
/// hyphen. Leading and trailing hyphens are trimmed from each piece.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn has_letter(t: &str) -> bool {
    t.chars().any(char::is_alphabetic)
}

/// Stages I-IV: lowercase, tokenize, drop stopwords, drop letterless tokens,
/// stem. Stems that land on a stopword or carry edge hyphens are cleaned too.
fn normalize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !stopwords.contains(t))
        .filter(|t| has_letter(t))
        .filter_map(|t| {
            let s = stem(&t);
            let s = s.trim_matches('-');
            (has_letter(s) && !stopwords.contains(s)).then(|| s.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymGroup {
    pub code: String,
    pub members: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct SynonymFile {
    groups: Vec<SynonymGroup>,
}

/// Groups of interchangeable phrases, each replaced by a single code token.
/// Codes and members are held in stemmed form; members are stored as their
/// space-joined token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SynonymTable {
    groups: Vec<SynonymGroup>,
    index: HashMap<Vec<String>, usize>,
    max_len: usize,
}

impl SynonymTable {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a table from groups that are already stemmed and lowercased.
    pub fn new(groups: Vec<SynonymGroup>) -> Result<Self> {
        let mut index = HashMap::new();
        let mut codes = HashMap::new();
        let mut max_len = 0;
        for (g, group) in groups.iter().enumerate() {
            if group.code.is_empty() || group.code.split_whitespace().count() != 1 {
                return Err(Error::Validation(format!(
                    "synonym code {:?} must be a single token",
                    group.code
                )));
            }
            if codes.insert(group.code.clone(), g).is_some() {
                return Err(Error::Validation(format!(
                    "synonym code {:?} used by two groups",
                    group.code
                )));
            }
            for m in &group.members {
                let phrase: Vec<String> = m.split_whitespace().map(str::to_string).collect();
                if phrase.is_empty() || phrase.len() > MAX_PHRASE_LEN {
                    return Err(Error::Validation(format!(
                        "synonym phrase {m:?} must have 1..={MAX_PHRASE_LEN} tokens"
                    )));
                }
                max_len = max_len.max(phrase.len());
                if let Some(prev) = index.insert(phrase, g) {
                    if prev != g {
                        return Err(Error::Validation(format!(
                            "synonym phrase {m:?} appears in groups {:?} and {:?}",
                            groups[prev].code, group.code
                        )));
                    }
                }
            }
        }
        for (phrase, &g) in &index {
            if let [single] = phrase.as_slice() {
                if let Some(&owner) = codes.get(single) {
                    if owner != g {
                        return Err(Error::Validation(format!(
                            "code {single:?} is a member of another group"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            groups,
            index,
            max_len,
        })
    }

    /// Builds a table from raw phrases, normalizing codes and members with
    /// the same stages applied to descriptions.
    pub fn from_raw(raw: Vec<SynonymGroup>, stopwords: &Stopwords) -> Result<Self> {
        let mut groups = Vec::with_capacity(raw.len());
        for g in raw {
            let code = normalize(&g.code, stopwords);
            let [code] = <[String; 1]>::try_from(code).map_err(|_| {
                Error::Validation(format!("synonym code {:?} must normalize to one token", g.code))
            })?;
            let mut members = Vec::new();
            for m in &g.members {
                let toks = normalize(m, stopwords);
                if toks.is_empty() {
                    return Err(Error::Validation(format!(
                        "synonym phrase {m:?} is empty after normalization"
                    )));
                }
                let joined = toks.join(" ");
                if !members.contains(&joined) {
                    members.push(joined);
                }
            }
            groups.push(SynonymGroup { code, members });
        }
        Self::new(groups)
    }

    pub fn parse_json(text: &str, stopwords: &Stopwords) -> Result<Self> {
        let file: SynonymFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("synonyms: {e}")))?;
        Self::from_raw(file.groups, stopwords)
    }

    /// The small packaged table.
    pub fn curated(stopwords: &Stopwords) -> Self {
        Self::parse_json(DEFAULT_SYNONYMS, stopwords).expect("packaged synonym table is valid")
    }

    pub fn groups(&self) -> &[SynonymGroup] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Serialization of the stemmed groups, as stored alongside a model.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&SynonymFile {
            groups: self.groups.clone(),
        })
        .expect("synonyms serialize")
    }
}

pub fn load_synonyms(path: impl AsRef<Path>, stopwords: &Stopwords) -> Result<SynonymTable> {
    SynonymTable::parse_json(&read_to_string(path.as_ref())?, stopwords)
}

/// Greedy left-to-right longest-phrase replacement.
pub fn apply_synonyms(tokens: &TokenSequence, table: &SynonymTable) -> TokenSequence {
    if table.is_empty() {
        return tokens.clone();
    }
    let toks = tokens.tokens();
    let mut out = Vec::with_capacity(toks.len());
    let mut i = 0;
    while i < toks.len() {
        let longest = table.max_len.min(toks.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|len| table.index.get(&toks[i..i + len]).map(|&g| (len, g)));
        match hit {
            Some((len, g)) => {
                out.push(table.groups[g].code.clone());
                i += len;
            }
            None => {
                out.push(toks[i].clone());
                i += 1;
            }
        }
    }
    TokenSequence(out)
}

/// Runs the full five-stage pipeline on one text.
pub fn preprocess(text: &str, stopwords: &Stopwords, synonyms: &SynonymTable) -> TokenSequence {
    apply_synonyms(&TokenSequence(normalize(text, stopwords)), synonyms)
}

/// Stopwords and synonyms bundled for repeated use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessor {
    pub stopwords: Stopwords,
    pub synonyms: SynonymTable,
}

impl Default for Preprocessor {
    fn default() -> Self {
        let stopwords = Stopwords::english();
        let synonyms = SynonymTable::curated(&stopwords);
        Self {
            stopwords,
            synonyms,
        }
    }
}

impl Preprocessor {
    pub fn new(stopwords: Stopwords, synonyms: SynonymTable) -> Self {
        Self {
            stopwords,
            synonyms,
        }
    }

    pub fn run(&self, text: &str) -> TokenSequence {
        preprocess(text, &self.stopwords, &self.synonyms)
    }

    pub fn fingerprint(&self) -> String {
        let words: Vec<&str> = self.stopwords.iter().collect();
        let mut f = Fingerprinter::new();
        f.part(words.join("\n").as_bytes())
            .part(self.synonyms.to_json().as_bytes());
        f.finish()
    }
}

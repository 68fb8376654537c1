//! Loading and validation of CVE corpora, the CWE taxonomy, and NVD feeds.

mod nvd;
mod taxonomy;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use nvd::import_nvd_feed;
pub use taxonomy::{load_taxonomy, CweNode, Taxonomy};

/// Numeric CWE identifier, rendered as `CWE-<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CweId(pub u32);

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CWE-{}", self.0)
    }
}

impl FromStr for CweId {
    type Err = Error;

    /// Accepts `CWE-<digits>` (prefix case-insensitive, surrounding
    /// whitespace ignored). Leading zeros are normalized away.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::Validation(format!("not a CWE identifier: {s:?}"));
        let (prefix, digits) = t.split_at_checked(4).ok_or_else(bad)?;
        if !prefix.eq_ignore_ascii_case("cwe-")
            || digits.is_empty()
            || !digits.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        digits.parse::<u32>().map(CweId).map_err(|_| bad())
    }
}

impl Serialize for CweId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CweId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A node of the classification tree: the synthetic virtual root or a CWE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Root,
    Cwe(CweId),
}

impl NodeId {
    pub fn cwe(self) -> Option<CweId> {
        match self {
            NodeId::Root => None,
            NodeId::Cwe(c) => Some(c),
        }
    }
}

impl From<CweId> for NodeId {
    fn from(c: CweId) -> Self {
        NodeId::Cwe(c)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Root => f.write_str("ROOT"),
            NodeId::Cwe(c) => c.fmt(f),
        }
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ROOT" {
            Ok(NodeId::Root)
        } else {
            s.parse().map(NodeId::Cwe)
        }
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One vulnerability report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CveRecord {
    pub id: String,
    pub description: String,
    pub cwe_labels: BTreeSet<CweId>,
}

#[derive(Deserialize)]
struct RawCve {
    id: String,
    description: String,
    #[serde(default)]
    cwe_labels: Vec<String>,
}

/// `CVE-YYYY-NNNN`, with four or more digits in the sequence part.
pub fn is_cve_id(s: &str) -> bool {
    let mut parts = s.split('-');
    matches!(
        (parts.next(), parts.next(), parts.next(), parts.next()),
        (Some("CVE"), Some(year), Some(seq), None)
            if year.len() == 4
                && year.bytes().all(|b| b.is_ascii_digit())
                && seq.len() >= 4
                && seq.bytes().all(|b| b.is_ascii_digit())
    )
}

impl CveRecord {
    /// Validating constructor. Labels are parsed into normalized form; a
    /// label repeated after normalization is rejected.
    pub fn new<S: AsRef<str>>(id: &str, description: &str, labels: &[S]) -> Result<Self> {
        if !is_cve_id(id) {
            return Err(Error::Validation(format!("not a CVE identifier: {id:?}")));
        }
        if description.trim().is_empty() {
            return Err(Error::Validation(format!("{id}: empty description")));
        }
        let mut cwe_labels = BTreeSet::new();
        for l in labels {
            let c: CweId = l.as_ref().parse()?;
            if !cwe_labels.insert(c) {
                return Err(Error::Validation(format!("{id}: duplicate label {c}")));
            }
        }
        Ok(Self {
            id: id.to_string(),
            description: description.to_string(),
            cwe_labels,
        })
    }

    pub fn is_labeled(&self) -> bool {
        !self.cwe_labels.is_empty()
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a JSONL corpus: one `{"id", "description", "cwe_labels"}` object
/// per line. Blank lines are skipped.
pub fn load_cve_corpus(path: impl AsRef<Path>) -> Result<Vec<CveRecord>> {
    let path = path.as_ref();
    parse_cve_corpus(&read_to_string(path)?, path)
}

pub(crate) fn parse_cve_corpus(text: &str, path: &Path) -> Result<Vec<CveRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawCve = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let rec = CveRecord::new(&raw.id, &raw.description, &raw.cwe_labels)
            .map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{}: duplicate CVE id {}",
                path.display(),
                i + 1,
                rec.id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_cve_corpus(records: &[CveRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

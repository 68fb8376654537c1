//! Adapter for the NVD 1.1 JSON data feeds (read-only subset).

use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::Deserialize;

use super::{read_to_string, CveRecord, CweId};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Feed {
    #[serde(rename = "CVE_Items")]
    items: Option<Vec<Item>>,
}

#[derive(Deserialize)]
struct Item {
    cve: Cve,
}

#[derive(Deserialize)]
struct Cve {
    #[serde(rename = "CVE_data_meta")]
    meta: Meta,
    #[serde(default)]
    problemtype: ProblemType,
    #[serde(default)]
    description: Descriptions,
}

#[derive(Deserialize)]
struct Meta {
    #[serde(rename = "ID")]
    id: String,
}

#[derive(Deserialize, Default)]
struct ProblemType {
    #[serde(default)]
    problemtype_data: Vec<ProblemTypeData>,
}

#[derive(Deserialize)]
struct ProblemTypeData {
    #[serde(default)]
    description: Vec<LangString>,
}

#[derive(Deserialize, Default)]
struct Descriptions {
    #[serde(default)]
    description_data: Vec<LangString>,
}

#[derive(Deserialize)]
struct LangString {
    #[serde(default)]
    lang: String,
    value: String,
}

/// Reads an NVD feed document and converts each item to a [`CveRecord`].
///
/// `NVD-CWE-Other` and `NVD-CWE-noinfo` contribute no label. Items with no
/// English description, or an id that is not a CVE id, are skipped with a
/// warning.
pub fn import_nvd_feed(path: impl AsRef<Path>) -> Result<Vec<CveRecord>> {
    parse_nvd_feed(&read_to_string(path.as_ref())?)
}

pub fn parse_nvd_feed(text: &str) -> Result<Vec<CveRecord>> {
    let feed: Feed =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("NVD feed: {e}")))?;
    let items = feed
        .items
        .ok_or_else(|| Error::Format("NVD feed: missing CVE_Items".into()))?;

    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let cve = item.cve;
        let id = cve.meta.id;
        let description = cve
            .description
            .description_data
            .iter()
            .filter(|d| d.lang.eq_ignore_ascii_case("en"))
            .map(|d| d.value.trim())
            .filter(|v| !v.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if description.is_empty() {
            warn!("{id}: no English description, skipped");
            continue;
        }
        let mut labels = BTreeSet::new();
        for v in cve
            .problemtype
            .problemtype_data
            .iter()
            .flat_map(|p| &p.description)
            .map(|d| d.value.trim())
        {
            if v.starts_with("NVD-CWE-") {
                continue;
            }
            match v.parse::<CweId>() {
                Ok(c) => {
                    labels.insert(c);
                }
                Err(_) => warn!("{id}: ignoring unrecognized problem type {v:?}"),
            }
        }
        let labels: Vec<String> = labels.iter().map(ToString::to_string).collect();
        match CveRecord::new(&id, &description, &labels) {
            Ok(r) => out.push(r),
            Err(e) => warn!("skipping NVD item: {e}"),
        }
    }
    Ok(out)
}

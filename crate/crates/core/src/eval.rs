//! Fine- and coarse-grain accuracy, macro recall/precision/F1, seeded
//! splits and report rendering.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchicalModel, Prediction, SelectionMode};
use crate::ingest::{CveRecord, CweId, Taxonomy};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grain {
    /// A full root-to-label path must be predicted.
    Fine,
    /// Any predicted class on a root-to-label path suffices.
    Coarse,
}

impl fmt::Display for Grain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grain::Fine => "fine",
            Grain::Coarse => "coarse",
        })
    }
}

/// Whether `pred` satisfies the grain's rule for the single label `label`.
pub fn label_correct(pred: &Prediction, label: CweId, taxonomy: &Taxonomy, grain: Grain) -> Result<bool> {
    match grain {
        Grain::Fine => {
            let truth = taxonomy.paths_to_root(label)?;
            Ok(truth
                .iter()
                .any(|t| pred.paths.iter().any(|p| p.starts_with(t))))
        }
        Grain::Coarse => {
            let on_path = taxonomy.ancestors_or_self(label);
            if !taxonomy.contains(label) {
                return Err(Error::Lookup(format!("{label} not in taxonomy")));
            }
            Ok(pred.candidates.iter().any(|c| on_path.contains(&c.cwe)))
        }
    }
}

fn resolvable(labels: &BTreeSet<CweId>, taxonomy: &Taxonomy) -> BTreeSet<CweId> {
    labels
        .iter()
        .copied()
        .filter(|l| {
            let ok = taxonomy.contains(*l);
            if !ok {
                warn!("label {l} not in taxonomy, skipped");
            }
            ok
        })
        .collect()
}

/// Correct when any resolvable label satisfies the grain's rule.
pub fn is_correct(pred: &Prediction, labels: &BTreeSet<CweId>, taxonomy: &Taxonomy, grain: Grain) -> Result<bool> {
    let labels = resolvable(labels, taxonomy);
    if labels.is_empty() {
        return Err(Error::Evaluation(format!(
            "{}: no label resolves in the taxonomy",
            pred.id.as_deref().unwrap_or("<unnamed>")
        )));
    }
    for l in labels {
        if label_correct(pred, l, taxonomy, grain)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// The terminal of the longest predicted path (smallest id on ties).
pub fn deepest_candidate(pred: &Prediction) -> Option<CweId> {
    pred.paths
        .iter()
        .filter_map(|p| p.last().map(|c| (p.len(), *c)))
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)))
        .map(|(_, c)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassTally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Grain,
    pub accuracy: f64,
    pub error: f64,
    /// Macro average over classes with at least one instance.
    pub recall: f64,
    /// Macro average over classes with at least one instance.
    pub precision: f64,
    pub f1: f64,
    pub micro_recall: f64,
    pub micro_precision: f64,
    pub per_class: BTreeMap<CweId, ClassTally>,
    pub n_instances: usize,
    /// Records dropped because no label resolved.
    pub skipped: usize,
    pub deeper_than_label_fraction: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Scores predictions against their label sets.
pub fn evaluate<'a>(
    pairs: impl IntoIterator<Item = (&'a Prediction, &'a BTreeSet<CweId>)>,
    taxonomy: &Taxonomy,
    grain: Grain,
) -> Result<EvalReport> {
    let mut per_class: BTreeMap<CweId, ClassTally> = BTreeMap::new();
    let mut seen_class: BTreeSet<CweId> = BTreeSet::new();
    let (mut n, mut correct, mut deeper, mut skipped) = (0usize, 0usize, 0usize, 0usize);

    for (pred, labels) in pairs {
        let labels = resolvable(labels, taxonomy);
        if labels.is_empty() {
            warn!(
                "{}: no label resolves in the taxonomy, skipped",
                pred.id.as_deref().unwrap_or("<unnamed>")
            );
            skipped += 1;
            continue;
        }
        n += 1;
        let deepest = deepest_candidate(pred);
        let mut hit = false;
        let mut deeper_hit = false;
        for &l in &labels {
            seen_class.insert(l);
            let ok = label_correct(pred, l, taxonomy, grain)?;
            let t = per_class.entry(l).or_default();
            if ok {
                t.tp += 1;
                hit = true;
                if deepest.is_some_and(|d| taxonomy.is_strict_descendant(d, l)) {
                    deeper_hit = true;
                }
            } else {
                t.fn_ += 1;
            }
        }
        if hit {
            correct += 1;
            deeper += usize::from(deeper_hit);
        } else if let Some(d) = deepest {
            per_class.entry(d).or_default().fp += 1;
        }
    }
    if n == 0 {
        return Err(Error::Evaluation("no evaluable instances".into()));
    }

    let classes: Vec<&ClassTally> = seen_class.iter().map(|c| &per_class[c]).collect();
    let k = classes.len() as f64;
    let recall = classes.iter().map(|t| ratio(t.tp, t.tp + t.fn_)).sum::<f64>() / k;
    let precision = classes.iter().map(|t| ratio(t.tp, t.tp + t.fp)).sum::<f64>() / k;
    let (tp, fp, fn_) = per_class
        .values()
        .fold((0, 0, 0), |a, t| (a.0 + t.tp, a.1 + t.fp, a.2 + t.fn_));
    let accuracy = correct as f64 / n as f64;
    Ok(EvalReport {
        mode: grain,
        accuracy,
        error: 1.0 - accuracy,
        recall,
        precision,
        f1: harmonic(precision, recall),
        micro_recall: ratio(tp, tp + fn_),
        micro_precision: ratio(tp, tp + fp),
        per_class,
        n_instances: n,
        skipped,
        deeper_than_label_fraction: ratio(deeper as u64, correct as u64),
    })
}

/// Classifies every record in parallel, preserving order.
pub fn predict_all<T: Scalar>(
    model: &HierarchicalModel<T>,
    records: &[CveRecord],
    mode: SelectionMode,
) -> Result<Vec<Prediction>> {
    records
        .par_iter()
        .map(|r| model.classify_record(r, mode))
        .collect()
}

/// Pairs predictions with records by id; records without a prediction are
/// an error.
pub fn join_predictions<'a>(
    preds: &'a [Prediction],
    records: &'a [CveRecord],
) -> Result<Vec<(&'a Prediction, &'a BTreeSet<CweId>)>> {
    let by_id: HashMap<&str, &Prediction> = preds
        .iter()
        .filter_map(|p| p.id.as_deref().map(|id| (id, p)))
        .collect();
    records
        .iter()
        .map(|r| {
            by_id
                .get(r.id.as_str())
                .map(|p| (*p, &r.cwe_labels))
                .ok_or_else(|| Error::Evaluation(format!("no prediction for {}", r.id)))
        })
        .collect()
}

/// Fine and coarse reports for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub fine: EvalReport,
    pub coarse: EvalReport,
}

type Metric = fn(&EvalReport) -> f64;

impl EvalSummary {
    pub fn from_pairs(pairs: &[(&Prediction, &BTreeSet<CweId>)], taxonomy: &Taxonomy) -> Result<Self> {
        Ok(Self {
            fine: evaluate(pairs.iter().copied(), taxonomy, Grain::Fine)?,
            coarse: evaluate(pairs.iter().copied(), taxonomy, Grain::Coarse)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Metric rows with one column per grain.
    pub fn table(&self) -> String {
        let rows: [(&str, Metric); 5] = [
            ("Accuracy", |r| r.accuracy),
            ("Error rate", |r| r.error),
            ("Recall", |r| r.recall),
            ("Precision", |r| r.precision),
            ("F1-score", |r| r.f1),
        ];
        let mut s = format!("{:<12}{:>10}{:>10}\n", "Metric", "Fine", "Coarse");
        for (name, get) in rows {
            s.push_str(&format!(
                "{:<12}{:>10.4}{:>10.4}\n",
                name,
                get(&self.fine),
                get(&self.coarse)
            ));
        }
        s
    }
}

/// Accuracy of several models side by side, one column per model.
pub fn comparison_table(models: &[(&str, &EvalSummary)]) -> String {
    let width = models.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8) + 2;
    let mut s = format!("{:<18}", "Accuracy");
    for (name, _) in models {
        s.push_str(&format!("{name:>width$}"));
    }
    s.push('\n');
    for (label, grain) in [("Fine", Grain::Fine), ("Coarse", Grain::Coarse)] {
        s.push_str(&format!("{label:<18}"));
        for (_, m) in models {
            let r = match grain {
                Grain::Fine => &m.fine,
                Grain::Coarse => &m.coarse,
            };
            s.push_str(&format!("{:>width$.4}", r.accuracy));
        }
        s.push('\n');
    }
    s
}

/// Shuffles with `seed` and puts `round(train_fraction * n)` records in the
/// training part, keeping both parts non-empty when `n >= 2`.
pub fn train_test_split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = items.len();
    let mut n_train = (train_fraction * n as f64).round() as usize;
    if n >= 2 {
        n_train = n_train.clamp(1, n - 1);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = idx.split_at(n_train.min(n));
    let pick = |ix: &[usize]| {
        let mut ix = ix.to_vec();
        ix.sort_unstable();
        ix.into_iter().map(|i| items[i].clone()).collect::<Vec<_>>()
    };
    Ok((pick(a), pick(b)))
}

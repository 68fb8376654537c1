use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;

use cwetrace::eval::{comparison_table, join_predictions, predict_all, train_test_split, EvalSummary};
use cwetrace::hierarchy::{train_model_logged, ModelKind, SelectionMode};
use cwetrace::ingest::{import_nvd_feed, load_cve_corpus, load_taxonomy, write_cve_corpus};
use cwetrace::textprep::{load_stopwords, load_synonyms};
use cwetrace::{modelstore, CveRecord, Error, Model, PipelineConfig, Prediction, Preprocessor, Stopwords, SynonymTable, Taxonomy};

use crate::{Baseline, ClassifyArgs, EvalArgs, IngestArgs, Mode, ModeArgs, TrainArgs};

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())).into());
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    require(&[&a.feed])?;
    let records = import_nvd_feed(&a.feed)?;
    write_cve_corpus(&records, &a.out)?;

    let labeled = records.iter().filter(|r| r.is_labeled()).count();
    let mut per_label: BTreeMap<_, usize> = BTreeMap::new();
    for r in &records {
        for l in &r.cwe_labels {
            *per_label.entry(*l).or_default() += 1;
        }
    }
    println!("{} records, {labeled} labeled", records.len());
    println!("{} distinct CWE labels", per_label.len());
    let mut top: Vec<_> = per_label.into_iter().collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (cwe, n) in top.iter().take(10) {
        println!("  {cwe:<10} {n}");
    }
    Ok(())
}

fn load_preprocessor(stopwords: Option<&Path>, synonyms: Option<&Path>) -> Result<Preprocessor> {
    let sw = match stopwords {
        Some(p) => load_stopwords(p)?,
        None => Stopwords::english(),
    };
    let syn = match synonyms {
        Some(p) => load_synonyms(p, &sw)?,
        None => SynonymTable::curated(&sw),
    };
    Ok(Preprocessor::new(sw, syn))
}

fn pipeline_config(a: &TrainArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(th) = a.th {
        cfg.min_count = th;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(n) = a.max_epochs {
        cfg.train.max_epochs = n;
    }
    if cfg.min_count == 0 {
        return Err(Error::Config("--th must be at least 1".into()).into());
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut inputs = vec![a.taxonomy.as_path(), a.corpus.as_path()];
    inputs.extend(a.stopwords.as_deref());
    inputs.extend(a.synonyms.as_deref());
    inputs.extend(a.config.as_deref());
    require(&inputs)?;
    let cfg = pipeline_config(a)?;
    let kind = match a.baseline {
        None => ModelKind::Hierarchical,
        Some(Baseline::Flat) => ModelKind::Flat,
        Some(Baseline::TwoLayer) => ModelKind::TwoLayer { hidden_size: a.hidden },
    };

    let taxonomy = load_taxonomy(&a.taxonomy)?;
    let preprocessor = load_preprocessor(a.stopwords.as_deref(), a.synonyms.as_deref())?;
    let mut corpus = load_cve_corpus(&a.corpus)?;
    if let Some(frac) = a.split {
        let (train, test) = train_test_split(&corpus, frac, cfg.train.seed)?;
        println!("split: {} training, {} held out", train.len(), test.len());
        corpus = train;
    }
    info!("training {kind:?} on {} records", corpus.len());

    let (model, logs): (Model, _) = train_model_logged(kind, &corpus, &taxonomy, &preprocessor, &cfg)?;
    let manifest = modelstore::save(&model, &a.model)?;

    if let Some(dir) = &a.log {
        for (node, log) in &logs {
            write_text(&dir.join(format!("{node}.csv")), &log.to_csv())?;
        }
    }
    println!("dictionary: {} terms", model.dictionary.len());
    println!("{:<12}{:>10}{:>8}", "node", "examples", "epochs");
    for n in &manifest.nodes {
        println!("{:<12}{:>10}{:>8}", n.node_id.to_string(), n.examples, n.epochs);
    }
    println!("model {} saved to {}", &manifest.model_fingerprint[..16], a.model.display());
    Ok(())
}

fn selection(m: &ModeArgs, model: Option<&Model>) -> Result<SelectionMode> {
    let mode = match m.mode {
        Mode::Threshold => SelectionMode::Threshold {
            tau: m
                .tau
                .or(model.map(|m| m.config.train.decision_threshold))
                .unwrap_or(cwetrace::netcore::DEFAULT_THRESHOLD),
        },
        Mode::Topk => SelectionMode::TopK { k: m.k },
    };
    mode.validate()?;
    Ok(mode)
}

fn load_model(dir: &Path) -> Result<Model> {
    modelstore::load(dir).with_context(|| format!("loading model {}", dir.display()))
}

pub fn classify(a: &ClassifyArgs) -> Result<()> {
    let mut inputs = vec![a.model.as_path()];
    inputs.extend(a.corpus.as_deref());
    require(&inputs)?;
    let model = load_model(&a.model)?;
    let mode = selection(&a.mode, Some(&model))?;

    let preds = match &a.corpus {
        Some(path) => predict_all(&model, &load_cve_corpus(path)?, mode)?,
        None => {
            let mut text = String::new();
            io::stdin().read_to_string(&mut text).context("reading stdin")?;
            vec![model.classify(text.trim(), mode)?]
        }
    };
    let out: String = preds.iter().map(|p| p.to_json_line() + "\n").collect();
    match &a.out {
        Some(path) => {
            write_text(path, &out)?;
            eprintln!("{} predictions written to {}", preds.len(), path.display());
        }
        None => io::stdout().write_all(out.as_bytes()).context("writing stdout")?,
    }
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                }
                .into()
            })
        })
        .collect()
}

/// Predictions from a model directory or a predictions file.
fn predictions_from(source: &Path, records: &[CveRecord], m: &ModeArgs) -> Result<(Vec<Prediction>, Option<Model>)> {
    if source.is_dir() {
        let model = load_model(source)?;
        let mode = selection(m, Some(&model))?;
        Ok((predict_all(&model, records, mode)?, Some(model)))
    } else {
        Ok((read_predictions(source)?, None))
    }
}

fn summarize(preds: &[Prediction], records: &[CveRecord], taxonomy: &Taxonomy) -> Result<EvalSummary> {
    let pairs = join_predictions(preds, records)?;
    Ok(EvalSummary::from_pairs(&pairs, taxonomy)?)
}

fn label(path: &Path) -> String {
    path.file_stem()
        .or(path.file_name())
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let source: PathBuf = match (&a.model, &a.predictions) {
        (_, Some(p)) => p.clone(),
        (Some(m), None) => m.clone(),
        (None, None) => bail!(Error::Config("one of --model or --predictions is required".into())),
    };
    let mut inputs = vec![a.corpus.as_path(), source.as_path()];
    inputs.extend(a.model.as_deref());
    inputs.extend(a.taxonomy.as_deref());
    inputs.extend(a.compare.as_deref());
    require(&inputs)?;

    let mut records = load_cve_corpus(&a.corpus)?;
    if let Some(frac) = a.split {
        let (train, test) = train_test_split(&records, frac, a.seed)?;
        println!("split: {} training, {} held out", train.len(), test.len());
        records = test;
    }
    records.retain(CveRecord::is_labeled);
    if records.is_empty() {
        bail!(Error::Evaluation("no labeled records to evaluate".into()));
    }

    let model = match &a.model {
        Some(dir) if a.predictions.is_some() => Some(load_model(dir)?),
        _ => None,
    };
    let (preds, ran) = predictions_from(&source, &records, &a.mode)?;
    let taxonomy = match (&a.taxonomy, ran.as_ref().or(model.as_ref())) {
        (Some(p), _) => load_taxonomy(p)?,
        (None, Some(m)) => m.taxonomy.clone(),
        (None, None) => bail!(Error::Config("--taxonomy is required to score saved predictions".into())),
    };

    let summary = summarize(&preds, &records, &taxonomy)?;
    let table = summary.table();
    print!("{table}");
    println!("instances: {}", summary.fine.n_instances);

    if let Some(other) = &a.compare {
        let (other_preds, _) = predictions_from(other, &records, &a.mode)?;
        let other_summary = summarize(&other_preds, &records, &taxonomy)?;
        let (x, y) = (label(&source), label(other));
        println!();
        print!("{}", comparison_table(&[(&x, &summary), (&y, &other_summary)]));
    }

    if let Some(out) = &a.out {
        write_text(out, &(summary.to_json() + "\n"))?;
        write_text(&out.with_extension("txt"), &table)?;
    }
    Ok(())
}

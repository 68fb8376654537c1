use super::*;
use crate::ingest::CweNode;
use crate::synth::{generate, SynthConfig, SynthData};

fn cwe(n: u32) -> CweId {
    CweId(n)
}

fn fv(dim: usize, on: &[usize]) -> FeatureVector {
    FeatureVector::new(dim, on.to_vec()).unwrap()
}

fn chain() -> Taxonomy {
    Taxonomy::new(vec![
        CweNode::new(707, "Improper Neutralization", "", &[]),
        CweNode::new(74, "Injection", "", &[707]),
        CweNode::new(77, "Command Injection", "", &[74]),
        CweNode::new(78, "OS Command Injection", "", &[77]),
        CweNode::new(20, "Improper Input Validation", "", &[]),
    ])
    .unwrap()
}

fn dag() -> Taxonomy {
    Taxonomy::new(vec![
        CweNode::new(435, "Interaction Error", "", &[]),
        CweNode::new(664, "Improper Control of a Resource", "", &[]),
        CweNode::new(22, "Path Traversal", "", &[435, 664]),
        CweNode::new(1, "left", "", &[435]),
        CweNode::new(2, "right", "", &[664]),
    ])
    .unwrap()
}

fn two_level() -> SynthData {
    generate(&SynthConfig {
        depth: 2,
        docs_per_leaf: 10,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn cfg(epochs: usize) -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            max_epochs: epochs,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn thr(tau: f64) -> SelectionMode {
    SelectionMode::Threshold { tau }
}

#[test]
fn chain_label_gives_one_example_per_edge() {
    let t = chain();
    let sets = assemble_training_sets(&[(fv(3, &[0]), BTreeSet::from([cwe(78)]))], &t);
    let expect = [
        (NodeId::Root, cwe(707)),
        (NodeId::Cwe(cwe(707)), cwe(74)),
        (NodeId::Cwe(cwe(74)), cwe(77)),
        (NodeId::Cwe(cwe(77)), cwe(78)),
    ];
    assert_eq!(sets.len(), 4);
    for (node, bit) in expect {
        let ex = &sets[&node];
        assert_eq!(ex.len(), 1);
        let kids = t.children_of(node);
        let on: Vec<CweId> = kids
            .iter()
            .zip(&ex[0].targets)
            .filter(|(_, b)| **b)
            .map(|(c, _)| *c)
            .collect();
        assert_eq!(on, vec![bit]);
    }
}

#[test]
fn two_parent_label_sets_bit_at_each_parent() {
    let t = dag();
    let sets = assemble_training_sets(&[(fv(3, &[1]), BTreeSet::from([cwe(22)]))], &t);
    let at = |p: u32| {
        let node = NodeId::Cwe(cwe(p));
        let i = t.children_of(node).iter().position(|c| *c == cwe(22)).unwrap();
        assert_eq!(sets[&node].len(), 1);
        sets[&node][0].targets[i]
    };
    assert!(at(435));
    assert!(at(664));
    assert_eq!(sets[&NodeId::Root][0].targets, vec![true, true]);
}

#[test]
fn two_labels_under_one_parent_share_an_example() {
    let t = dag();
    let sets = assemble_training_sets(&[(fv(3, &[1]), BTreeSet::from([cwe(22), cwe(1)]))], &t);
    let ex = &sets[&NodeId::Cwe(cwe(435))];
    assert_eq!(ex.len(), 1);
    assert_eq!(ex[0].targets, vec![true, true]);
    assert_eq!(sets[&NodeId::Cwe(cwe(664))][0].targets, vec![false, true]);
}

#[test]
fn unknown_labels_are_skipped() {
    let t = chain();
    let sets = assemble_training_sets(&[(fv(3, &[0]), BTreeSet::from([cwe(999)]))], &t);
    assert!(sets.is_empty());
    let sets = assemble_training_sets(&[(fv(3, &[0]), BTreeSet::from([cwe(999), cwe(20)]))], &t);
    assert_eq!(sets.len(), 1);
}

#[test]
fn no_all_zero_targets() {
    let d = two_level();
    let items: Vec<_> = d
        .corpus
        .iter()
        .map(|r| (FeatureVector::zeros(1), r.cwe_labels.clone()))
        .collect();
    for ex in assemble_training_sets(&items, &d.taxonomy).values().flatten() {
        assert!(ex.targets.iter().any(|b| *b));
    }
}

#[test]
fn two_level_synthetic_model_has_three_classifiers() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(5)).unwrap();
    assert_eq!(m.classifiers.len(), 3);
    for (node, net) in &m.classifiers {
        assert_eq!(net.child_ids(), m.taxonomy.children_of(*node));
        assert_eq!(net.dictionary_fingerprint(), m.dictionary.fingerprint());
    }
    assert_eq!(m.trained_nodes().count(), 3);
}

#[test]
fn uncovered_subtree_keeps_initial_weights() {
    let d = two_level();
    let a = d.taxonomy.children_of(NodeId::Root)[0];
    let b = d.taxonomy.children_of(NodeId::Root)[1];
    let only_a: Vec<CveRecord> = d
        .corpus
        .iter()
        .filter(|r| r.cwe_labels.iter().all(|l| d.taxonomy.is_strict_descendant(*l, a)))
        .cloned()
        .collect();
    let p = Preprocessor::default();
    let trained: HierarchicalModel<f64> = train_hierarchy(&only_a, &d.taxonomy, &p, &cfg(5)).unwrap();
    let init: HierarchicalModel<f64> = train_hierarchy(&only_a, &d.taxonomy, &p, &cfg(0)).unwrap();
    assert_eq!(trained.training[&NodeId::Cwe(b)].examples, 0);
    assert!(trained.training[&NodeId::Cwe(a)].examples > 0);
    assert_eq!(trained.classifiers[&NodeId::Cwe(b)], init.classifiers[&NodeId::Cwe(b)]);
    assert_ne!(trained.classifiers[&NodeId::Cwe(a)], init.classifiers[&NodeId::Cwe(a)]);
}

#[test]
fn same_seed_same_fingerprint() {
    let d = two_level();
    let p = Preprocessor::default();
    let a: HierarchicalModel<f64> = train_hierarchy(&d.corpus, &d.taxonomy, &p, &cfg(3)).unwrap();
    let b: HierarchicalModel<f64> = train_hierarchy(&d.corpus, &d.taxonomy, &p, &cfg(3)).unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    let mut other = cfg(3);
    other.train.seed = 99;
    let c: HierarchicalModel<f64> = train_hierarchy(&d.corpus, &d.taxonomy, &p, &other).unwrap();
    assert_ne!(a.fingerprint(), c.fingerprint());
}

#[test]
fn empty_corpus_is_a_config_error() {
    let d = two_level();
    let r: Result<HierarchicalModel<f64>> = train_hierarchy(&[], &d.taxonomy, &Preprocessor::default(), &cfg(1));
    assert!(matches!(r, Err(Error::Config(_))));
}

/// Dense re-evaluation of every node followed by the selection rule.
fn oracle_paths(m: &HierarchicalModel<f64>, text: &str, tau: f64) -> Vec<Vec<CweId>> {
    let dense = m.encode(text).to_dense();
    let selected_at = |node: NodeId| -> Vec<CweId> {
        let net = m.classifiers[&node].as_linear().unwrap();
        let w = &net.weights;
        (0..w.cols())
            .filter(|&j| {
                let x: f64 = (0..w.rows()).map(|k| dense[k] * w[(k, j)]).sum();
                1.0 / (1.0 + (-x).exp()) >= tau
            })
            .map(|j| net.child_ids[j])
            .collect()
    };
    let mut out = Vec::new();
    let mut stack = vec![(NodeId::Root, vec![])];
    while let Some((node, path)) = stack.pop() {
        let kids = if m.taxonomy.children_of(node).is_empty() {
            vec![]
        } else {
            selected_at(node)
        };
        if kids.is_empty() {
            if !path.is_empty() {
                out.push(path);
            }
            continue;
        }
        for c in kids {
            let mut p = path.clone();
            p.push(c);
            stack.push((NodeId::Cwe(c), p));
        }
    }
    out.sort();
    out
}

#[test]
fn leaf_vocabulary_descends_to_that_leaf() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(0)).unwrap();
    for leaf in d.leaves() {
        let text = d.leaf_vocab[&leaf].join(" ");
        let pred = m.classify(&text, thr(0.75)).unwrap();
        let parent = d.taxonomy.parents_of(leaf)[0].cwe().unwrap();
        assert_eq!(pred.paths, vec![vec![parent, leaf]]);
        assert_eq!(pred.paths, oracle_paths(&m, &text, 0.75));
    }
}

#[test]
fn matches_dense_oracle_on_noisy_text() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for leaf in d.leaves() {
        for tau in [0.1, 0.5, 0.75, 0.9] {
            let text = crate::synth::draw_text(&d, leaf, 10, 0.4, &mut rng);
            let pred = m.classify(&text, thr(tau)).unwrap();
            assert_eq!(pred.paths, oracle_paths(&m, &text, tau), "tau {tau}: {text}");
        }
    }
}

#[test]
fn unattainable_threshold_selects_nothing() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(0)).unwrap();
    let text = d.leaf_vocab.values().next().unwrap().join(" ");
    let pred = m.classify(&text, thr(1.0)).unwrap();
    assert!(pred.candidates.is_empty());
    assert!(pred.paths.is_empty());
    assert_eq!(pred.evaluated_nodes, 1);
}

#[test]
fn zero_threshold_selects_everything() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(0)).unwrap();
    let pred = m.classify("anything", thr(0.0)).unwrap();
    assert_eq!(pred.candidates.len(), d.taxonomy.len());
    assert_eq!(pred.paths.len(), 4);
}

#[test]
fn raising_tau_never_adds_candidates() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for leaf in d.leaves() {
        let text = crate::synth::draw_text(&d, leaf, 8, 0.5, &mut rng);
        let mut prev = m.classify(&text, thr(0.0)).unwrap().candidate_ids();
        for tau in [0.2, 0.4, 0.5, 0.6, 0.8, 0.95, 1.0] {
            let cur = m.classify(&text, thr(tau)).unwrap().candidate_ids();
            assert!(cur.is_subset(&prev));
            prev = cur;
        }
    }
}

#[test]
fn evaluates_only_selected_nodes() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(1)).unwrap();
    for tau in [0.0, 0.5, 0.75] {
        let pred = m.classify("bakom", thr(tau)).unwrap();
        let internal = pred
            .candidates
            .iter()
            .filter(|c| !m.taxonomy.children_of(NodeId::Cwe(c.cwe)).is_empty())
            .count();
        assert_eq!(pred.evaluated_nodes, internal + 1);
    }
}

#[test]
fn top_k_descends_one_path() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(0)).unwrap();
    let leaf = d.leaves().next().unwrap();
    let pred = m.classify(&d.leaf_vocab[&leaf].join(" "), SelectionMode::TopK { k: 1 }).unwrap();
    assert_eq!(pred.paths.len(), 1);
    assert_eq!(pred.paths[0].last(), Some(&leaf));
    let pred = m.classify("zzz", SelectionMode::TopK { k: 2 }).unwrap();
    assert_eq!(pred.candidates.len(), 6);
}

#[test]
fn empty_text_is_rejected() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(0)).unwrap();
    assert!(matches!(m.classify("  ", thr(0.5)), Err(Error::Validation(_))));
    assert!(matches!(m.classify("x", thr(1.5)), Err(Error::Config(_))));
    assert!(matches!(m.classify("x", SelectionMode::TopK { k: 0 }), Err(Error::Config(_))));
}

#[test]
fn two_parent_node_is_deduplicated() {
    let t = dag();
    let mut corpus = Vec::new();
    for i in 0..6 {
        corpus.push(CveRecord::new(&format!("CVE-2019-{:04}", 1000 + i), "dot dot slash traversal escapes root", &["CWE-22"]).unwrap());
        corpus.push(CveRecord::new(&format!("CVE-2019-{:04}", 2000 + i), "race window lock timing", &["CWE-1"]).unwrap());
        corpus.push(CveRecord::new(&format!("CVE-2019-{:04}", 3000 + i), "leak handle memory exhaustion", &["CWE-2"]).unwrap());
    }
    let m: HierarchicalModel<f64> = train_hierarchy(&corpus, &t, &Preprocessor::default(), &cfg(0)).unwrap();
    let pred = m.classify("dot dot slash traversal escapes root", thr(0.6)).unwrap();
    assert_eq!(pred.paths, vec![vec![cwe(435), cwe(22)], vec![cwe(664), cwe(22)]]);
    let ids: Vec<CweId> = pred.candidates.iter().map(|c| c.cwe).collect();
    assert_eq!(ids, vec![cwe(22), cwe(435), cwe(664)]);
}

#[test]
fn flat_baseline_covers_every_class() {
    let d = two_level();
    let m: HierarchicalModel<f64> =
        train_flat_baseline(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(30)).unwrap();
    assert_eq!(m.classifiers.len(), 1);
    let root = &m.classifiers[&NodeId::Root];
    assert_eq!(root.child_ids().len(), 6);
    let again: HierarchicalModel<f64> =
        train_flat_baseline(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(30)).unwrap();
    assert_eq!(m.fingerprint(), again.fingerprint());
    let leaf = d.leaves().next().unwrap();
    let pred = m.classify(&d.leaf_vocab[&leaf].join(" "), thr(0.5)).unwrap();
    for c in &pred.candidates {
        assert!(pred.paths.iter().any(|p| p.contains(&c.cwe)));
    }
}

#[test]
fn two_layer_baseline_runs_end_to_end() {
    let d = two_level();
    let m: HierarchicalModel<f64> = train_two_layer_baseline(
        &d.corpus,
        &d.taxonomy,
        &Preprocessor::default(),
        &cfg(20),
        8,
    )
    .unwrap();
    assert_eq!(m.kind, ModelKind::TwoLayer { hidden_size: 8 });
    assert_eq!(m.classifiers.len(), 3);
    let leaf = d.leaves().next().unwrap();
    let pred = m.classify(&d.leaf_vocab[&leaf].join(" "), SelectionMode::TopK { k: 1 }).unwrap();
    assert_eq!(pred.paths.len(), 1);
}

#[test]
fn random_init_differs_from_tfidf() {
    let d = two_level();
    let mut c = cfg(0);
    c.init = WeightInit::Random;
    let r: HierarchicalModel<f64> = train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &c).unwrap();
    let t: HierarchicalModel<f64> =
        train_hierarchy(&d.corpus, &d.taxonomy, &Preprocessor::default(), &cfg(0)).unwrap();
    assert_ne!(r.fingerprint(), t.fingerprint());
}

#[test]
fn maximal_paths_of_a_diamond() {
    let edges = BTreeMap::from([
        (NodeId::Root, BTreeSet::from([cwe(1), cwe(2)])),
        (NodeId::Cwe(cwe(1)), BTreeSet::from([cwe(3)])),
        (NodeId::Cwe(cwe(2)), BTreeSet::from([cwe(3)])),
    ]);
    assert_eq!(
        classify::maximal_paths(&edges),
        vec![vec![cwe(1), cwe(3)], vec![cwe(2), cwe(3)]]
    );
}

#[test]
fn threshold_selection_is_logit_exact() {
    let m = SelectionMode::Threshold { tau: 0.5 };
    assert_eq!(m.select(&[0.0f64, -1e-12, 3.0]), vec![0, 2]);
    let m = SelectionMode::TopK { k: 2 };
    assert_eq!(m.select(&[1.0f64, 3.0, 1.0]), vec![0, 1]);
}

#[test]
fn prediction_json_shape() {
    let p = Prediction {
        id: Some("CVE-2019-7632".into()),
        candidates: vec![Candidate { cwe: cwe(78), score: 0.9 }],
        paths: vec![vec![cwe(77), cwe(78)]],
        mode: thr(0.75),
        scores: BTreeMap::new(),
        evaluated_nodes: 2,
        stopped_at: vec![],
    };
    let v: serde_json::Value = serde_json::from_str(&p.to_json_line()).unwrap();
    assert_eq!(
        v,
        serde_json::json!({
            "id": "CVE-2019-7632",
            "candidates": [{"cwe": "CWE-78", "score": 0.9}],
            "paths": [["CWE-77", "CWE-78"]],
            "mode": {"kind": "threshold", "tau": 0.75}
        })
    );
    let back: Prediction = serde_json::from_str(&p.to_json_line()).unwrap();
    assert_eq!(back.paths, p.paths);
}

//! Properties of the taxonomy, scoring, networks, inference and metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cwetrace::eval::{evaluate, is_correct, join_predictions, predict_all, Grain};
use cwetrace::features::{build_dictionary, FeatureVector};
use cwetrace::hierarchy::{train_hierarchy, SelectionMode};
use cwetrace::matrix::Matrix;
use cwetrace::netcore::{bce_with_logits, fit, Example, Network, NodeClassifier, TrainConfig};
use cwetrace::scoring::{init_weights, term_frequency, ClassDocument, DocumentFrequencies};
use cwetrace::synth::{draw_text, generate, SynthConfig, SynthData};
use cwetrace::textprep::TokenSequence;
use cwetrace::{CweId, CweNode, Model, NodeId, PipelineConfig, Prediction, Preprocessor, Taxonomy};

/// Random DAG: node i may take any earlier nodes as parents.
fn random_dag(n: usize, seed: u64) -> Taxonomy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = (0..n as u32)
        .map(|i| {
            let parents: Vec<u32> = (0..i).filter(|_| rng.gen_bool(0.15)).map(|p| p + 1).collect();
            CweNode::new(i + 1, &format!("n{i}"), "", &parents)
        })
        .collect();
    Taxonomy::new(nodes).unwrap()
}

/// Root-to-`target` paths by exhaustive search over child lists.
fn dfs_paths(t: &Taxonomy, target: CweId) -> usize {
    fn go(t: &Taxonomy, node: NodeId, target: CweId) -> usize {
        if node == NodeId::Cwe(target) {
            return 1;
        }
        t.children_of(node).iter().map(|&c| go(t, NodeId::Cwe(c), target)).sum()
    }
    go(t, NodeId::Root, target)
}

proptest! {
    #[test]
    fn paths_end_at_node_and_follow_edges(n in 1usize..30, seed in any::<u64>()) {
        let t = random_dag(n, seed);
        for id in t.ids() {
            let paths = t.paths_to_root(id).unwrap();
            prop_assert_eq!(paths.len(), dfs_paths(&t, id));
            for p in &paths {
                prop_assert_eq!(p.last(), Some(&id));
                prop_assert!(t.is_edge(NodeId::Root, p[0]));
                for w in p.windows(2) {
                    prop_assert!(t.is_edge(NodeId::Cwe(w[0]), w[1]));
                }
            }
        }
    }

    #[test]
    fn taxonomy_json_round_trip(n in 1usize..30, seed in any::<u64>()) {
        let t = random_dag(n, seed);
        let back = Taxonomy::from_json(&t.to_json()).unwrap();
        prop_assert_eq!(&back, &t);
        for id in t.internal_nodes() {
            prop_assert_eq!(back.children_of(id), t.children_of(id));
        }
    }

    #[test]
    fn cwe_ids_round_trip(n in any::<u32>()) {
        let id = CweId(n);
        prop_assert_eq!(id.to_string().parse::<CweId>().unwrap(), id);
        prop_assert_eq!(format!("cwe-000{n}").parse::<CweId>().unwrap(), id);
    }

    #[test]
    fn scoring_ranges_and_column_permutation(
        docs in prop::collection::vec(prop::collection::btree_map(0usize..12, 1u64..6, 0..8), 2..5),
    ) {
        let dict = build_dictionary(
            &[(0..12).map(|i| format!("t{i:02}")).collect::<TokenSequence>()],
            1,
        ).unwrap();
        let kids: Vec<CweId> = (0..docs.len() as u32).map(CweId).collect();
        let class_docs: BTreeMap<CweId, ClassDocument> = kids
            .iter()
            .zip(&docs)
            .map(|(k, d)| (*k, ClassDocument::new(*k, d.clone())))
            .collect();
        let all: Vec<ClassDocument> = class_docs.values().cloned().collect();
        let df = DocumentFrequencies::new(&all);
        for d in &all {
            for t in 0..12 {
                let tf = term_frequency::<f64>(t, d);
                prop_assert!((0.0..=1.0).contains(&tf));
                prop_assert!(df.idf::<f64>(t) >= 0.0);
            }
        }
        let w: Matrix<f64> = init_weights(&kids, &dict, &class_docs, &all).unwrap();
        prop_assert!(w.as_slice().iter().all(|v| *v >= 0.0));
        let rev: Vec<CweId> = kids.iter().rev().copied().collect();
        let wr: Matrix<f64> = init_weights(&rev, &dict, &class_docs, &all).unwrap();
        for k in 0..w.rows() {
            for g in 0..kids.len() {
                prop_assert_eq!(w[(k, g)], wr[(k, kids.len() - 1 - g)]);
            }
        }
    }

    #[test]
    fn logits_are_additive_over_disjoint_features(d in 2usize..25, c in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Matrix<f64> = Matrix::glorot(d, c, &mut rng);
        let clf = NodeClassifier::new(NodeId::Root, (0..c as u32).map(CweId).collect(), w, "").unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for k in 0..d {
            match rng.gen_range(0..3) {
                0 => a.push(k),
                1 => b.push(k),
                _ => {}
            }
        }
        let union: Vec<usize> = a.iter().chain(&b).copied().collect::<BTreeSet<_>>().into_iter().collect();
        let la = clf.forward_logits(&FeatureVector::new(d, a).unwrap()).unwrap();
        let lb = clf.forward_logits(&FeatureVector::new(d, b).unwrap()).unwrap();
        let lu = clf.forward_logits(&FeatureVector::new(d, union).unwrap()).unwrap();
        for j in 0..c {
            prop_assert!((lu[j] - (la[j] + lb[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_non_negative(logits in prop::collection::vec(-50.0f64..50.0, 1..6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<bool> = logits.iter().map(|_| rng.gen_bool(0.5)).collect();
        prop_assert!(bce_with_logits(&logits, &targets).unwrap() >= 0.0);
    }

    #[test]
    fn small_gradient_step_descends(d in 2usize..20, c in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kids: Vec<CweId> = (0..c as u32).map(CweId).collect();
        let batch: Vec<Example> = (0..4)
            .map(|_| {
                let on: Vec<usize> = (0..d).filter(|_| rng.gen_bool(0.5)).collect();
                Example::new(FeatureVector::new(d, on).unwrap(), (0..c).map(|_| rng.gen_bool(0.5)).collect())
            })
            .collect();
        let refs: Vec<&Example> = batch.iter().collect();
        let w = Matrix::glorot(d, c, &mut rng);
        let clf = NodeClassifier::new(NodeId::Root, kids.clone(), w.clone(), "").unwrap();
        let g = clf.gradient(&refs).unwrap();
        let norm: f64 = g.as_slice().iter().map(|v| v * v).sum();
        prop_assume!(norm > 1e-12);
        let lr = 1e-3;
        let stepped: Vec<f64> = w.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a - lr * b).collect();
        let next = NodeClassifier::new(NodeId::Root, kids, Matrix::from_vec(d, c, stepped).unwrap(), "").unwrap();
        prop_assert!(next.batch_loss(&refs).unwrap() < clf.batch_loss(&refs).unwrap());
    }

    #[test]
    fn training_is_reproducible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples: Vec<Example> = (0..20)
            .map(|_| {
                let on: Vec<usize> = (0..8).filter(|_| rng.gen_bool(0.4)).collect();
                Example::new(FeatureVector::new(8, on).unwrap(), vec![rng.gen_bool(0.5), rng.gen_bool(0.5)])
            })
            .collect();
        let cfg = TrainConfig { max_epochs: 5, batch_size: 4, seed, ..TrainConfig::default() };
        let start: Matrix<f64> = Matrix::glorot(8, 2, &mut rng);
        let run = || {
            let mut clf = NodeClassifier::new(NodeId::Root, vec![CweId(1), CweId(2)], start.clone(), "").unwrap();
            fit(&mut clf, &examples, &cfg).unwrap();
            clf.weights
        };
        prop_assert_eq!(run(), run());
    }
}

fn synth() -> &'static (SynthData, Model) {
    static CELL: OnceLock<(SynthData, Model)> = OnceLock::new();
    CELL.get_or_init(|| {
        let data = generate(&SynthConfig {
            vocab_per_leaf: 20,
            docs_per_leaf: 15,
            noise: 0.2,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.train.max_epochs = 5;
        let model = train_hierarchy(&data.corpus, &data.taxonomy, &Preprocessor::default(), &cfg).unwrap();
        (data, model)
    })
}

fn sample_text(seed: u64, noise: f64) -> String {
    let (data, _) = synth();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let leaves: Vec<CweId> = data.leaves().collect();
    let leaf = leaves[rng.gen_range(0..leaves.len())];
    let n = rng.gen_range(1..15);
    draw_text(data, leaf, n, noise, &mut rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_are_path_consistent(seed in any::<u64>(), noise in 0.0f64..1.0, tau in 0.0f64..1.0, k in 1usize..3) {
        let (_, m) = synth();
        let text = sample_text(seed, noise);
        for mode in [SelectionMode::Threshold { tau }, SelectionMode::TopK { k }] {
            let p = m.classify(&text, mode).unwrap();
            let cands = p.candidate_ids();
            prop_assert_eq!(cands.len(), p.candidates.len());
            let on_paths: BTreeSet<CweId> = p.paths.iter().flatten().copied().collect();
            prop_assert_eq!(&on_paths, &cands);
            for path in &p.paths {
                prop_assert!(m.taxonomy.is_edge(NodeId::Root, path[0]));
                for w in path.windows(2) {
                    prop_assert!(m.taxonomy.is_edge(NodeId::Cwe(w[0]), w[1]));
                }
            }
            let distinct: BTreeSet<&Vec<CweId>> = p.paths.iter().collect();
            prop_assert_eq!(distinct.len(), p.paths.len());
            let internal = cands.iter().filter(|c| !m.taxonomy.children_of(NodeId::Cwe(**c)).is_empty()).count();
            prop_assert_eq!(p.evaluated_nodes, internal + 1);
        }
    }

    #[test]
    fn raising_tau_never_adds(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (_, m) = synth();
        let text = sample_text(seed, 0.5);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p_lo = m.classify(&text, SelectionMode::Threshold { tau: lo }).unwrap().candidate_ids();
        let p_hi = m.classify(&text, SelectionMode::Threshold { tau: hi }).unwrap().candidate_ids();
        prop_assert!(p_hi.is_subset(&p_lo));
    }

    #[test]
    fn fine_implies_coarse(seed in any::<u64>(), label_seed in any::<u64>(), tau in 0.0f64..1.0) {
        let (data, m) = synth();
        let p = m.classify(&sample_text(seed, 0.6), SelectionMode::Threshold { tau }).unwrap();
        let ids: Vec<CweId> = data.taxonomy.ids().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
        let labels: BTreeSet<CweId> = (0..rng.gen_range(1..3)).map(|_| ids[rng.gen_range(0..ids.len())]).collect();
        if is_correct(&p, &labels, &data.taxonomy, Grain::Fine).unwrap() {
            prop_assert!(is_correct(&p, &labels, &data.taxonomy, Grain::Coarse).unwrap());
        }
    }

    #[test]
    fn metrics_ignore_test_order(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (data, m) = synth();
        let mut recs = data.corpus.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        recs.shuffle(&mut rng);
        recs.truncate(40);
        let preds = predict_all(m, &recs, SelectionMode::default()).unwrap();
        let mut pairs: Vec<(&Prediction, &BTreeSet<CweId>)> = preds.iter().zip(recs.iter().map(|r| &r.cwe_labels)).collect();
        for grain in [Grain::Fine, Grain::Coarse] {
            let a = evaluate(pairs.clone(), &data.taxonomy, grain).unwrap();
            pairs.shuffle(&mut rng);
            let b = evaluate(pairs.clone(), &data.taxonomy, grain).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn coarse_accuracy_dominates_fine() {
    let (data, m) = synth();
    for tau in [0.3, 0.6, 0.75, 0.9] {
        let preds = predict_all(m, &data.corpus, SelectionMode::Threshold { tau }).unwrap();
        let pairs: Vec<_> = preds.iter().zip(data.corpus.iter().map(|r| &r.cwe_labels)).collect();
        let f = evaluate(pairs.clone(), &data.taxonomy, Grain::Fine).unwrap();
        let c = evaluate(pairs, &data.taxonomy, Grain::Coarse).unwrap();
        assert!(c.accuracy >= f.accuracy);
    }
}

#[test]
fn persisted_predictions_give_the_same_report() {
    let (data, m) = synth();
    let preds = predict_all(m, &data.corpus, SelectionMode::default()).unwrap();
    let live: Vec<_> = preds.iter().zip(data.corpus.iter().map(|r| &r.cwe_labels)).collect();
    let jsonl: String = preds.iter().map(|p| p.to_json_line() + "\n").collect();
    let parsed: Vec<Prediction> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let joined = join_predictions(&parsed, &data.corpus).unwrap();
    for grain in [Grain::Fine, Grain::Coarse] {
        assert_eq!(
            evaluate(live.clone(), &data.taxonomy, grain).unwrap(),
            evaluate(joined.clone(), &data.taxonomy, grain).unwrap()
        );
    }
}

#[test]
fn untrained_prior_picks_the_true_child_at_every_level() {
    let data = generate(&SynthConfig {
        vocab_per_leaf: 20,
        docs_per_leaf: 10,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.train.max_epochs = 0;
    let m: Model = train_hierarchy(&data.corpus, &data.taxonomy, &Preprocessor::default(), &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for leaf in data.leaves() {
        for _ in 0..10 {
            let text = draw_text(&data, leaf, 6, 0.0, &mut rng);
            let fv = m.encode(&text);
            let truth = &data.taxonomy.paths_to_root(leaf).unwrap()[0];
            let mut parent = NodeId::Root;
            for &c in truth {
                let net = m.classifier(parent).unwrap();
                let scores = net.scores(&fv).unwrap();
                let best = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
                assert_eq!(net.child_ids()[best], c);
                parent = NodeId::Cwe(c);
            }
        }
    }
}

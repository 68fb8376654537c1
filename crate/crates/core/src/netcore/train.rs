use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{adam_step, check_batch, AdamState, Example, Network, NodeClassifier, TrainConfig};

/// Smallest drop in mean epoch loss that counts as progress.
pub const MIN_LOSS_IMPROVEMENT: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    /// Mean training loss of each epoch, accumulated over its mini-batches.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainingLog {
    pub fn epochs(&self) -> usize {
        self.epoch_losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// `epoch,loss` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }
}

/// Mini-batch Adam over `examples`, shuffled each epoch by a generator
/// seeded from `cfg.seed`.
pub fn fit<T: Scalar, N: Network<T>>(
    net: &mut N,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Contract("training needs at least one example".into()));
    }
    check_batch(net, &examples.iter().collect::<Vec<_>>())?;

    let mut states: Vec<AdamState<T>> = net
        .parameters_mut()
        .into_iter()
        .map(|p| AdamState::for_weights(p))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainingLog::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = net.loss_and_gradients(&batch)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss in epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            for ((param, grad), state) in net.parameters_mut().into_iter().zip(&grads).zip(&mut states) {
                adam_step(param, grad, state, cfg);
            }
        }
        let epoch_loss = total / examples.len() as f64;
        log.epoch_losses.push(epoch_loss);

        if cfg.early_stop_patience > 0 {
            if best - epoch_loss >= MIN_LOSS_IMPROVEMENT {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.early_stop_patience {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(log)
}

/// Trains a single-layer node classifier from its current weights.
pub fn train_node<T: Scalar>(
    mut clf: NodeClassifier<T>,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<(NodeClassifier<T>, TrainingLog)> {
    let log = fit(&mut clf, examples, cfg)?;
    Ok((clf, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::ingest::{CweId, NodeId};
    use crate::matrix::Matrix;

    /// Two classes, class 0 owns features 0..3, class 1 owns 3..6.
    fn separable() -> Vec<Example> {
        let mut out = Vec::new();
        for i in 0..48 {
            let class = i % 2;
            let base = class * 3;
            let on = [base, base + (i / 2) % 3];
            out.push(Example::new(FeatureVector::new(6, on).unwrap(), vec![class == 0, class == 1]));
        }
        out
    }

    fn tfidf_like_init() -> NodeClassifier<f64> {
        let mut w = Matrix::zeros(6, 2);
        for k in 0..3 {
            w[(k, 0)] = 0.3;
            w[(k + 3, 1)] = 0.3;
        }
        NodeClassifier::new(NodeId::Root, vec![CweId(1), CweId(2)], w, "fp").unwrap()
    }

    fn accuracy(clf: &NodeClassifier<f64>, ex: &[Example], tau: f64) -> f64 {
        let ok = ex
            .iter()
            .filter(|e| {
                let s = clf.forward_scores(&e.features).unwrap();
                s.iter().zip(&e.targets).all(|(&p, &z)| (p >= tau) == z)
            })
            .count();
        ok as f64 / ex.len() as f64
    }

    #[test]
    fn separable_toy_trains_from_tfidf_init() {
        let ex = separable();
        let cfg = TrainConfig { max_epochs: 10, batch_size: 4, early_stop_patience: 0, ..Default::default() };
        let (clf, log) = train_node(tfidf_like_init(), &ex, &cfg).unwrap();
        assert!(log.epoch_losses[0] <= std::f64::consts::LN_2);
        assert_eq!(log.epochs(), 10);
        assert_eq!(accuracy(&clf, &ex, 0.75), 1.0);
        assert!(log.final_loss().unwrap() < log.epoch_losses[0]);
    }

    #[test]
    fn zero_epochs_leave_weights() {
        let init = tfidf_like_init();
        let cfg = TrainConfig { max_epochs: 0, ..Default::default() };
        let (clf, log) = train_node(init.clone(), &separable(), &cfg).unwrap();
        assert_eq!(clf, init);
        assert_eq!(log.epochs(), 0);
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let cfg = TrainConfig { max_epochs: 25, batch_size: 3, seed: 99, ..Default::default() };
        let (a, la) = train_node(tfidf_like_init(), &separable(), &cfg).unwrap();
        let (b, lb) = train_node(tfidf_like_init(), &separable(), &cfg).unwrap();
        assert_eq!(a.weights.as_slice(), b.weights.as_slice());
        assert_eq!(la, lb);
    }

    #[test]
    fn plateau_stops_early() {
        // Identical features with opposite targets: the loss floors at ln 2.
        let x = FeatureVector::new(6, [0]).unwrap();
        let ex = vec![
            Example::new(x.clone(), vec![true, false]),
            Example::new(x, vec![false, true]),
        ];
        let cfg = TrainConfig { max_epochs: 500, early_stop_patience: 3, ..Default::default() };
        let (_, log) = train_node(tfidf_like_init(), &ex, &cfg).unwrap();
        assert!(log.stopped_early);
        assert!(log.epochs() < 500);
    }

    #[test]
    fn empty_examples_rejected() {
        assert!(train_node(tfidf_like_init(), &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn csv_log() {
        let log = TrainingLog { epoch_losses: vec![0.5, 0.25], stopped_early: false };
        assert_eq!(log.to_csv(), "epoch,loss\n0,0.5\n1,0.25\n");
    }
}

//! Per-node classifiers: a bias-free single layer of sigmoid outputs over
//! the multi-hot feature vector, trained with Adam on binary cross-entropy.

mod adam;
mod train;
mod two_layer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ingest::{CweId, NodeId};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, Scalar};

pub use adam::{adam_step, adam_step_dense, AdamState};
pub use train::{fit, train_node, TrainingLog, MIN_LOSS_IMPROVEMENT};
pub use two_layer::TwoLayerClassifier;

/// Default sigmoid score a child must reach to be selected.
pub const DEFAULT_THRESHOLD: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub decision_threshold: f64,
    /// Epochs without a loss improvement of at least
    /// [`MIN_LOSS_IMPROVEMENT`] before stopping; 0 disables early stopping.
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            max_epochs: 500,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            decision_threshold: DEFAULT_THRESHOLD,
            early_stop_patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) || !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon < 0.0 {
            return bad("adam_epsilon must be non-negative");
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return bad("decision_threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

/// One training example: features plus a multi-hot target over the node's
/// children.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureVector,
    pub targets: Vec<bool>,
}

impl Example {
    pub fn new(features: FeatureVector, targets: Vec<bool>) -> Self {
        Self { features, targets }
    }
}

/// Gradient stored as its non-zero rows, sorted by row index.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGradient<T> {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> RowGradient<T> {
    pub fn from_dense(m: &Matrix<T>) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            entries: (0..m.rows()).map(|r| (r, m.row(r).to_vec())).collect(),
        }
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let mut m = Matrix::zeros(self.rows, self.cols);
        for (r, vals) in &self.entries {
            m.row_mut(*r).copy_from_slice(vals);
        }
        m
    }
}

/// Anything [`fit`] can train.
pub trait Network<T: Scalar> {
    fn n_outputs(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn logits(&self, fv: &FeatureVector) -> Result<Vec<T>>;

    /// Mean loss over the batch and one gradient per parameter matrix, in
    /// the order of [`Network::parameters_mut`].
    fn loss_and_gradients(&self, batch: &[&Example]) -> Result<(T, Vec<RowGradient<T>>)>;

    fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>>;

    fn scores(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        Ok(self.logits(fv)?.into_iter().map(sigmoid).collect())
    }
}

/// Single-layer, bias-free classifier at one decision node. Column `i` of
/// `weights` feeds the output neuron for `child_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeClassifier<T> {
    pub node_id: NodeId,
    pub child_ids: Vec<CweId>,
    pub weights: Matrix<T>,
    pub dictionary_fingerprint: String,
}

impl<T: Scalar> NodeClassifier<T> {
    pub fn new(
        node_id: NodeId,
        child_ids: Vec<CweId>,
        weights: Matrix<T>,
        dictionary_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if weights.cols() != child_ids.len() {
            return Err(Error::Dimension(format!(
                "{node_id}: {} weight columns for {} children",
                weights.cols(),
                child_ids.len()
            )));
        }
        Ok(Self {
            node_id,
            child_ids,
            weights,
            dictionary_fingerprint: dictionary_fingerprint.into(),
        })
    }

    fn check_dim(&self, fv: &FeatureVector) -> Result<()> {
        if fv.dimension() != self.weights.rows() {
            return Err(Error::Dimension(format!(
                "{}: feature dimension {} but dictionary size {}",
                self.node_id,
                fv.dimension(),
                self.weights.rows()
            )));
        }
        Ok(())
    }

    /// `O_i = sum_k F[k] * w[k][i]`, summed over the on-positions only.
    pub fn forward_logits(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        self.check_dim(fv)?;
        let mut out = vec![T::zero(); self.child_ids.len()];
        for &k in fv.on_positions() {
            for (o, &w) in out.iter_mut().zip(self.weights.row(k)) {
                *o = *o + w;
            }
        }
        Ok(out)
    }

    pub fn forward_scores(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        Ok(self.forward_logits(fv)?.into_iter().map(sigmoid).collect())
    }

    /// Analytic gradient of the mean batch loss with respect to the weights.
    pub fn gradient(&self, batch: &[&Example]) -> Result<Matrix<T>> {
        Ok(self.loss_and_gradients(batch)?.1.remove(0).to_dense())
    }

    pub fn batch_loss(&self, batch: &[&Example]) -> Result<T> {
        Ok(self.loss_and_gradients(batch)?.0)
    }
}

pub(crate) fn check_batch<T: Scalar, N: Network<T> + ?Sized>(net: &N, batch: &[&Example]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("gradient of an empty batch".into()));
    }
    for ex in batch {
        if ex.targets.len() != net.n_outputs() {
            return Err(Error::Dimension(format!(
                "target length {} for {} outputs",
                ex.targets.len(),
                net.n_outputs()
            )));
        }
        if ex.features.dimension() != net.input_dim() {
            return Err(Error::Dimension(format!(
                "feature dimension {} for input size {}",
                ex.features.dimension(),
                net.input_dim()
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> Network<T> for NodeClassifier<T> {
    fn n_outputs(&self) -> usize {
        self.child_ids.len()
    }

    fn input_dim(&self) -> usize {
        self.weights.rows()
    }

    fn logits(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        self.forward_logits(fv)
    }

    fn loss_and_gradients(&self, batch: &[&Example]) -> Result<(T, Vec<RowGradient<T>>)> {
        check_batch(self, batch)?;
        let c = self.child_ids.len();
        let scale = T::one() / T::from_usize(batch.len() * c.max(1)).unwrap();
        let mut rows: std::collections::BTreeMap<usize, Vec<T>> = std::collections::BTreeMap::new();
        let mut loss = T::zero();
        for ex in batch {
            let logits = self.forward_logits(&ex.features)?;
            loss = loss + bce_with_logits(&logits, &ex.targets)?;
            let residual: Vec<T> = logits
                .iter()
                .zip(&ex.targets)
                .map(|(&x, &z)| (sigmoid(x) - if z { T::one() } else { T::zero() }) * scale)
                .collect();
            for &k in ex.features.on_positions() {
                let row = rows.entry(k).or_insert_with(|| vec![T::zero(); c]);
                for (g, &r) in row.iter_mut().zip(&residual) {
                    *g = *g + r;
                }
            }
        }
        let loss = loss / T::from_usize(batch.len()).unwrap();
        let grad = RowGradient {
            rows: self.weights.rows(),
            cols: c,
            entries: rows.into_iter().collect(),
        };
        Ok((loss, vec![grad]))
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![&mut self.weights]
    }
}

/// Mean over classes of the logit-form binary cross-entropy,
/// `max(x, 0) - x z + ln(1 + e^-|x|)`.
pub fn bce_with_logits<T: Scalar>(logits: &[T], targets: &[bool]) -> Result<T> {
    if logits.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Ok(T::zero());
    }
    let sum: T = logits
        .iter()
        .zip(targets)
        .map(|(&x, &z)| {
            let z = if z { T::one() } else { T::zero() };
            x.max(T::zero()) - x * z + (-x.abs()).exp().ln_1p()
        })
        .sum();
    Ok(sum / T::from_usize(logits.len()).unwrap())
}

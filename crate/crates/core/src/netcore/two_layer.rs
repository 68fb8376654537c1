use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::ingest::{CweId, NodeId};
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, Scalar};

use super::{bce_with_logits, check_batch, Example, Network, RowGradient};

/// Node classifier with one sigmoid hidden layer, used as a baseline.
/// Neither layer has a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerClassifier<T> {
    pub node_id: NodeId,
    pub child_ids: Vec<CweId>,
    /// D x H.
    pub hidden: Matrix<T>,
    /// H x C.
    pub output: Matrix<T>,
    pub dictionary_fingerprint: String,
}

impl<T: Scalar> TwoLayerClassifier<T> {
    pub fn new(
        node_id: NodeId,
        child_ids: Vec<CweId>,
        hidden: Matrix<T>,
        output: Matrix<T>,
        dictionary_fingerprint: impl Into<String>,
    ) -> Result<Self> {
        if hidden.cols() != output.rows() || output.cols() != child_ids.len() {
            return Err(Error::Dimension(format!(
                "{node_id}: layers {:?} and {:?} for {} children",
                hidden.shape(),
                output.shape(),
                child_ids.len()
            )));
        }
        Ok(Self {
            node_id,
            child_ids,
            hidden,
            output,
            dictionary_fingerprint: dictionary_fingerprint.into(),
        })
    }

    /// Glorot-uniform initialization of both layers.
    pub fn random<R: Rng + ?Sized>(
        node_id: NodeId,
        child_ids: Vec<CweId>,
        input_dim: usize,
        hidden_size: usize,
        dictionary_fingerprint: impl Into<String>,
        rng: &mut R,
    ) -> Self {
        let hidden = Matrix::glorot(input_dim, hidden_size, rng);
        let output = Matrix::glorot(hidden_size, child_ids.len(), rng);
        Self {
            node_id,
            child_ids,
            hidden,
            output,
            dictionary_fingerprint: dictionary_fingerprint.into(),
        }
    }

    fn hidden_activations(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        if fv.dimension() != self.hidden.rows() {
            return Err(Error::Dimension(format!(
                "{}: feature dimension {} but input size {}",
                self.node_id,
                fv.dimension(),
                self.hidden.rows()
            )));
        }
        let mut pre = vec![T::zero(); self.hidden.cols()];
        for &k in fv.on_positions() {
            for (p, &w) in pre.iter_mut().zip(self.hidden.row(k)) {
                *p = *p + w;
            }
        }
        Ok(pre.into_iter().map(sigmoid).collect())
    }

    fn output_logits(&self, h: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.output.cols()];
        for (j, &hj) in h.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.output.row(j)) {
                *o = *o + hj * w;
            }
        }
        out
    }

    pub fn batch_loss(&self, batch: &[&Example]) -> Result<T> {
        Ok(self.loss_and_gradients(batch)?.0)
    }

    /// Dense gradients for (hidden, output).
    pub fn gradients(&self, batch: &[&Example]) -> Result<(Matrix<T>, Matrix<T>)> {
        let (_, g) = self.loss_and_gradients(batch)?;
        Ok((g[0].to_dense(), g[1].to_dense()))
    }
}

impl<T: Scalar> Network<T> for TwoLayerClassifier<T> {
    fn n_outputs(&self) -> usize {
        self.child_ids.len()
    }

    fn input_dim(&self) -> usize {
        self.hidden.rows()
    }

    fn logits(&self, fv: &FeatureVector) -> Result<Vec<T>> {
        let h = self.hidden_activations(fv)?;
        Ok(self.output_logits(&h))
    }

    fn loss_and_gradients(&self, batch: &[&Example]) -> Result<(T, Vec<RowGradient<T>>)> {
        check_batch(self, batch)?;
        let c = self.child_ids.len();
        let hsize = self.hidden.cols();
        let scale = T::one() / T::from_usize(batch.len() * c.max(1)).unwrap();
        let mut g_out = Matrix::zeros(hsize, c);
        let mut g_hidden: BTreeMap<usize, Vec<T>> = BTreeMap::new();
        let mut loss = T::zero();

        for ex in batch {
            let h = self.hidden_activations(&ex.features)?;
            let logits = self.output_logits(&h);
            loss = loss + bce_with_logits(&logits, &ex.targets)?;
            let residual: Vec<T> = logits
                .iter()
                .zip(&ex.targets)
                .map(|(&x, &z)| (sigmoid(x) - if z { T::one() } else { T::zero() }) * scale)
                .collect();
            let mut d_pre = vec![T::zero(); hsize];
            for j in 0..hsize {
                let mut dh = T::zero();
                for (i, &r) in residual.iter().enumerate() {
                    g_out[(j, i)] = g_out[(j, i)] + h[j] * r;
                    dh = dh + self.output[(j, i)] * r;
                }
                d_pre[j] = dh * h[j] * (T::one() - h[j]);
            }
            for &k in ex.features.on_positions() {
                let row = g_hidden.entry(k).or_insert_with(|| vec![T::zero(); hsize]);
                for (g, &d) in row.iter_mut().zip(&d_pre) {
                    *g = *g + d;
                }
            }
        }
        let loss = loss / T::from_usize(batch.len()).unwrap();
        let hidden_grad = RowGradient {
            rows: self.hidden.rows(),
            cols: hsize,
            entries: g_hidden.into_iter().collect(),
        };
        Ok((loss, vec![hidden_grad, RowGradient::from_dense(&g_out)]))
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix<T>> {
        vec![&mut self.hidden, &mut self.output]
    }
}

use std::collections::HashMap;

use crate::matrix::Matrix;
use crate::scalar::Scalar;

use super::{RowGradient, TrainConfig};

/// Adam moment estimates for one parameter matrix.
///
/// Rows whose gradient has always been zero keep zero moments and receive a
/// zero update, so only rows seen at least once are visited.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Matrix<T>,
    pub second_moment: Matrix<T>,
    pub step_count: u64,
    touched: Vec<bool>,
    touched_rows: Vec<usize>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            first_moment: Matrix::zeros(rows, cols),
            second_moment: Matrix::zeros(rows, cols),
            step_count: 0,
            touched: vec![false; rows],
            touched_rows: Vec::new(),
        }
    }

    pub fn for_weights(w: &Matrix<T>) -> Self {
        Self::new(w.rows(), w.cols())
    }
}

/// One bias-corrected Adam update of `weights` in place.
pub fn adam_step<T: Scalar>(
    weights: &mut Matrix<T>,
    grads: &RowGradient<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) {
    assert_eq!(weights.shape(), (grads.rows, grads.cols), "gradient shape");
    assert_eq!(weights.shape(), state.first_moment.shape(), "Adam state shape");

    let b1 = T::from_f64_lossy(cfg.adam_beta1);
    let b2 = T::from_f64_lossy(cfg.adam_beta2);
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.adam_epsilon);
    let one = T::one();

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);

    for (r, _) in &grads.entries {
        if !state.touched[*r] {
            state.touched[*r] = true;
            state.touched_rows.push(*r);
        }
    }

    let zero_row = vec![T::zero(); weights.cols()];
    let by_row: HashMap<usize, &[T]> = grads
        .entries
        .iter()
        .map(|(r, vals)| (*r, vals.as_slice()))
        .collect();
    for &r in &state.touched_rows {
        let g = by_row.get(&r).copied().unwrap_or(&zero_row);
        for (c, &gv) in g.iter().enumerate() {
            let m = b1 * state.first_moment[(r, c)] + (one - b1) * gv;
            let v = b2 * state.second_moment[(r, c)] + (one - b2) * gv * gv;
            state.first_moment[(r, c)] = m;
            state.second_moment[(r, c)] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            weights[(r, c)] = weights[(r, c)] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// [`adam_step`] taking a dense gradient.
pub fn adam_step_dense<T: Scalar>(
    weights: &mut Matrix<T>,
    grads: &Matrix<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) {
    adam_step(weights, &RowGradient::from_dense(grads), state, cfg);
}

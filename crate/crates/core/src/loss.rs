//! Label-smoothed cross-entropy over a batch of logits.

use ndarray::{ArrayD, Ix2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean smoothed negative log-likelihood and its gradient with respect to the
/// logits. Targets are `(1 - ε)·onehot + ε/K`; `ε = 0` is plain cross-entropy.
pub fn smoothed_cross_entropy<T: Scalar>(
    logits: &ArrayD<T>,
    labels: &[usize],
    smoothing: f64,
) -> Result<(f64, ArrayD<T>)> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::invalid("label_smoothing", "must lie in [0, 1)"));
    }
    let z = logits
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|e| Error::contract(format!("logits must be 2-D: {e}")))?;
    let (n, k) = z.dim();
    if n != labels.len() {
        return Err(Error::contract(format!("{n} logit rows but {} labels", labels.len())));
    }
    if n == 0 || k == 0 {
        return Err(Error::contract("empty logits"));
    }
    let off = smoothing / k as f64;
    let on = 1.0 - smoothing + off;
    let mut grad = ArrayD::zeros(logits.raw_dim());
    let mut total = 0.0f64;
    for (r, row) in z.outer_iter().enumerate() {
        let y = labels[r];
        if y >= k {
            return Err(Error::contract(format!("label {y} outside {k} classes")));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let sum_exp: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let mut row_loss = 0.0;
        for (j, v) in row.iter().enumerate() {
            let q = if j == y { on } else { off };
            let logp = v.as_f64() - log_z;
            row_loss -= q * logp;
            grad[[r, j]] = T::of((logp.exp() - q) / n as f64);
        }
        total += row_loss;
    }
    Ok((total / n as f64, grad))
}

/// Index of the largest logit in each row; ties go to the lower index.
pub fn argmax_rows<T: Scalar>(logits: &ArrayD<T>) -> Result<Vec<usize>> {
    let z = logits
        .view()
        .into_dimensionality::<Ix2>()
        .map_err(|e| Error::contract(format!("logits must be 2-D: {e}")))?;
    Ok(z.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

//! Soft-threshold pruning with a learnable per-layer threshold and the
//! annealed proxy gradient for masked weights.
//!
//! Forward: `ŵ = sign(w)·max(|w| - σ(s), 0)`. Backward: active entries pass the
//! upstream gradient through, masked entries pass `α × upstream`. With a top-k
//! backward superset, masked entries outside the superset receive nothing.

use std::cmp::Ordering;

use ndarray::{Array, ArrayBase, Data, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, signum, Scalar};

/// Output of [`prune_forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct PruneForwardResult<T, D: Dimension> {
    pub sparse_weights: Array<T, D>,
    /// `true` iff `|w| - σ(s) > 0`.
    pub active_mask: Array<bool, D>,
    /// `σ(s)` in working precision.
    pub threshold: T,
    pub active_count: usize,
    pub active_fraction: f64,
}

impl<T, D: Dimension> PruneForwardResult<T, D> {
    pub fn len(&self) -> usize {
        self.active_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active_mask.is_empty()
    }

    pub fn sparsity(&self) -> f64 {
        1.0 - self.active_fraction
    }
}

/// Which masked weights receive (annealed) gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackwardSuperset {
    /// Every weight is in the superset.
    #[default]
    AllWeights,
    /// Only the `⌈keep_fraction·n⌉` largest-magnitude weights.
    TopKFraction { keep_fraction: f64 },
}

impl BackwardSuperset {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BackwardSuperset::AllWeights => Ok(()),
            BackwardSuperset::TopKFraction { keep_fraction } => {
                if keep_fraction > 0.0 && keep_fraction <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("keep_fraction", "must lie in (0, 1]"))
                }
            }
        }
    }

    pub fn keep_fraction(&self) -> f64 {
        match *self {
            BackwardSuperset::AllWeights => 1.0,
            BackwardSuperset::TopKFraction { keep_fraction } => keep_fraction,
        }
    }
}

fn sigmoid_prime(s: f64) -> f64 {
    let g = sigmoid(s);
    g * (1.0 - g)
}

/// Masks and shrinks `weights` by the threshold `σ(s)`.
pub fn prune_forward<T, S, D>(weights: &ArrayBase<S, D>, s: T) -> Result<PruneForwardResult<T, D>>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension,
{
    if !s.is_finite() {
        return Err(Error::NonFinite("threshold parameter"));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    let threshold = T::of(sigmoid(s.as_f64()));
    let mut active_mask = Array::from_elem(weights.raw_dim(), false);
    let mut sparse_weights = Array::zeros(weights.raw_dim());
    let mut active_count = 0usize;
    Zip::from(&mut sparse_weights)
        .and(&mut active_mask)
        .and(weights)
        .for_each(|out, m, &w| {
            let shifted = w.abs() - threshold;
            if shifted > T::zero() {
                *out = signum(w) * shifted;
                *m = true;
                active_count += 1;
            }
        });
    let n = weights.len();
    let active_fraction = if n == 0 {
        0.0
    } else {
        active_count as f64 / n as f64
    };
    Ok(PruneForwardResult {
        sparse_weights,
        active_mask,
        threshold,
        active_count,
        active_fraction,
    })
}

fn check_shapes<T, D: Dimension>(
    upstream_shape: &[usize],
    result: &PruneForwardResult<T, D>,
    weights_shape: &[usize],
) -> Result<()> {
    if upstream_shape != result.active_mask.shape() || weights_shape != upstream_shape {
        return Err(Error::contract(format!(
            "shape mismatch: upstream {:?}, mask {:?}, weights {:?}",
            upstream_shape,
            result.active_mask.shape(),
            weights_shape
        )));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::invalid("alpha", format!("{alpha} is outside [0, 1]")))
    }
}

/// Number of entries a top-k superset keeps: `⌈keep_fraction·n⌉` clamped to
/// `[1, n]`. A 1e-9 slack absorbs products like `0.3·10 = 3.0000000000000004`.
pub fn topk_count(n: usize, keep_fraction: f64) -> usize {
    let exact = keep_fraction * n as f64;
    ((exact - 1e-9).ceil().max(1.0) as usize).min(n)
}

/// Flat (logical order) indices of the `⌈keep_fraction·n⌉` largest-magnitude
/// entries, ascending. Equal magnitudes prefer the lower index.
pub fn topk_superset<T, S, D>(weights: &ArrayBase<S, D>, keep_fraction: f64) -> Result<Vec<usize>>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension,
{
    if weights.is_empty() {
        return Err(Error::contract("top-k superset of an empty tensor"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::invalid("keep_fraction", "must lie in (0, 1]"));
    }
    let mags: Vec<f64> = weights.iter().map(|w| w.abs().as_f64()).collect();
    let n = mags.len();
    let k = topk_count(n, keep_fraction);
    let mut idx: Vec<usize> = (0..n).collect();
    if k < n {
        let by_rank = |&a: &usize, &b: &usize| -> Ordering {
            mags[b].total_cmp(&mags[a]).then(a.cmp(&b))
        };
        idx.select_nth_unstable_by(k - 1, by_rank);
        idx.truncate(k);
        idx.sort_unstable();
    }
    Ok(idx)
}

/// Boolean membership mask of the backward superset, or `None` when every
/// weight is included.
pub fn superset_mask<T, S, D>(
    weights: &ArrayBase<S, D>,
    superset: &BackwardSuperset,
) -> Result<Option<Array<bool, D>>>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension,
{
    match *superset {
        BackwardSuperset::AllWeights => Ok(None),
        BackwardSuperset::TopKFraction { keep_fraction } => {
            let keep = topk_superset(weights, keep_fraction)?;
            let mut flat = vec![false; weights.len()];
            for i in keep {
                flat[i] = true;
            }
            let mask = Array::from_shape_vec(weights.raw_dim(), flat)
                .map_err(|e| Error::contract(e.to_string()))?;
            Ok(Some(mask))
        }
    }
}

/// Gradient of the loss with respect to the dense weights.
pub fn prune_backward_weights<T, S1, S2, D>(
    upstream: &ArrayBase<S1, D>,
    result: &PruneForwardResult<T, D>,
    alpha: f64,
    superset: &BackwardSuperset,
    weights: &ArrayBase<S2, D>,
) -> Result<Array<T, D>>
where
    T: Scalar,
    S1: Data<Elem = T>,
    S2: Data<Elem = T>,
    D: Dimension,
{
    check_shapes(upstream.shape(), result, weights.shape())?;
    check_alpha(alpha)?;
    let mask = superset_mask(weights, superset)?;
    Ok(weight_gradient(upstream, result, alpha, mask.as_ref()))
}

/// Gradient of the loss with respect to the threshold parameter `s`, summed
/// over every entry.
pub fn prune_backward_threshold<T, S1, S2, D>(
    upstream: &ArrayBase<S1, D>,
    result: &PruneForwardResult<T, D>,
    alpha: f64,
    s: T,
    weights: &ArrayBase<S2, D>,
) -> Result<f64>
where
    T: Scalar,
    S1: Data<Elem = T>,
    S2: Data<Elem = T>,
    D: Dimension,
{
    check_shapes(upstream.shape(), result, weights.shape())?;
    check_alpha(alpha)?;
    Ok(threshold_gradient(upstream, result, alpha, s, weights, None))
}

/// Both gradients over the same backward superset: the weight gradient and
/// the threshold gradient.
pub fn prune_backward<T, S1, S2, D>(
    upstream: &ArrayBase<S1, D>,
    result: &PruneForwardResult<T, D>,
    alpha: f64,
    superset: &BackwardSuperset,
    weights: &ArrayBase<S2, D>,
    s: T,
) -> Result<(Array<T, D>, f64)>
where
    T: Scalar,
    S1: Data<Elem = T>,
    S2: Data<Elem = T>,
    D: Dimension,
{
    check_shapes(upstream.shape(), result, weights.shape())?;
    check_alpha(alpha)?;
    // α = 0 makes every masked entry zero anyway, so the superset only
    // matters when masked weights can receive gradient.
    let mask = if alpha == 0.0 {
        None
    } else {
        superset_mask(weights, superset)?
    };
    let dw = weight_gradient(upstream, result, alpha, mask.as_ref());
    let ds = threshold_gradient(upstream, result, alpha, s, weights, mask.as_ref());
    Ok((dw, ds))
}

fn weight_gradient<T, S, D>(
    upstream: &ArrayBase<S, D>,
    result: &PruneForwardResult<T, D>,
    alpha: f64,
    superset: Option<&Array<bool, D>>,
) -> Array<T, D>
where
    T: Scalar,
    S: Data<Elem = T>,
    D: Dimension,
{
    let a = T::of(alpha);
    let mut grad = Array::zeros(upstream.raw_dim());
    match superset {
        None => Zip::from(&mut grad)
            .and(upstream)
            .and(&result.active_mask)
            .for_each(|g, &u, &active| *g = if active { u } else { a * u }),
        Some(keep) => Zip::from(&mut grad)
            .and(upstream)
            .and(&result.active_mask)
            .and(keep)
            .for_each(|g, &u, &active, &kept| {
                *g = if active {
                    u
                } else if kept {
                    a * u
                } else {
                    T::zero()
                }
            }),
    }
    grad
}

fn threshold_gradient<T, S1, S2, D>(
    upstream: &ArrayBase<S1, D>,
    result: &PruneForwardResult<T, D>,
    alpha: f64,
    s: T,
    weights: &ArrayBase<S2, D>,
    superset: Option<&Array<bool, D>>,
) -> f64
where
    T: Scalar,
    S1: Data<Elem = T>,
    S2: Data<Elem = T>,
    D: Dimension,
{
    // Sequential f64 accumulation in logical order keeps the sum reproducible.
    let mut inner = 0.0f64;
    Zip::from(upstream)
        .and(&result.active_mask)
        .and(weights)
        .for_each(|&u, &active, &w| {
            let gate = if active { 1.0 } else { alpha };
            inner += u.as_f64() * signum(w).as_f64() * gate;
        });
    if let Some(keep) = superset {
        // Remove masked entries outside the superset.
        let mut excluded = 0.0f64;
        Zip::from(upstream)
            .and(&result.active_mask)
            .and(weights)
            .and(keep)
            .for_each(|&u, &active, &w, &kept| {
                if !active && !kept {
                    excluded += u.as_f64() * signum(w).as_f64() * alpha;
                }
            });
        inner -= excluded;
    }
    -sigmoid_prime(s.as_f64()) * inner
}

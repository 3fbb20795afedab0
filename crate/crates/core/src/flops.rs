//! Analytic training and inference cost, counted in multiply-accumulates.
//!
//! Per sample, a layer's forward and input-gradient products each cost its
//! sparse count `f_S`; the weight-gradient product costs `f_D`, `f_S`, the
//! top-k budget `f_B`, or `max(f_B, f_S)` depending on α and the backward
//! superset. Bias and activation work is not counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layer, PrunableLayer, SparseModel};
use crate::prune::{topk_count, BackwardSuperset};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerFlops {
    pub layer: usize,
    /// `f_D`: dense MACs per sample.
    pub dense: u64,
    /// `f_S`: MACs per sample with masked weights skipped.
    pub sparse: u64,
    /// `f_B`: weight-gradient MACs per sample under a top-k superset.
    pub backward: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FlopsLedger {
    pub layers: Vec<LayerFlops>,
}

/// Dense MACs per sample of one layer; zero for parameter-free layers.
pub fn layer_dense_flops<T: Scalar>(layer: &Layer<T>) -> u64 {
    match layer {
        Layer::Affine(p) => p.param_count() as u64,
        Layer::Conv2d(_, g) => {
            (g.out_h * g.out_w * g.out_channels * g.in_channels * g.kernel * g.kernel) as u64
        }
        Layer::Relu | Layer::Flatten => 0,
    }
}

impl FlopsLedger {
    /// Snapshot of `model` at its current thresholds.
    pub fn from_model<T: Scalar>(model: &SparseModel<T>, superset: &BackwardSuperset) -> Self {
        Self::build(model, superset, |p| p.zero_count())
    }

    /// Snapshot of the masks used by the most recent training forward pass;
    /// layers without one fall back to their current thresholds.
    pub fn from_forward<T: Scalar>(model: &SparseModel<T>, superset: &BackwardSuperset) -> Self {
        Self::build(model, superset, |p| match &p.last_forward {
            Some(fw) if !p.dense_exempt => fw.len() - fw.active_count,
            _ => p.zero_count(),
        })
    }

    fn build<T: Scalar>(
        model: &SparseModel<T>,
        superset: &BackwardSuperset,
        zeros: impl Fn(&PrunableLayer<T>) -> usize,
    ) -> Self {
        let layers = model
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, layer)| {
                let p = layer.prunable()?;
                let per_weight = layer.macs_per_weight();
                let n = p.param_count();
                let active = (n - zeros(p)) as u64;
                let dense = layer_dense_flops(layer);
                debug_assert_eq!(dense, n as u64 * per_weight);
                let backward = match *superset {
                    BackwardSuperset::AllWeights => None,
                    BackwardSuperset::TopKFraction { .. } if p.dense_exempt => Some(dense),
                    BackwardSuperset::TopKFraction { keep_fraction } => {
                        Some(topk_count(n, keep_fraction) as u64 * per_weight)
                    }
                };
                Some(LayerFlops {
                    layer: i,
                    dense,
                    sparse: active * per_weight,
                    backward,
                })
            })
            .collect();
        Self { layers }
    }

    pub fn dense_infer(&self) -> u64 {
        self.layers.iter().map(|l| l.dense).sum()
    }

    pub fn sparse_infer(&self) -> u64 {
        self.layers.iter().map(|l| l.sparse).sum()
    }

    pub fn dense_train(&self) -> u64 {
        3 * self.dense_infer()
    }
}

/// Training MACs per sample for the given α regime and backward superset.
pub fn train_sample_flops(
    ledger: &FlopsLedger,
    alpha_zero: bool,
    superset: &BackwardSuperset,
) -> Result<u64> {
    let mut total = 0u64;
    for l in &ledger.layers {
        let weight_grad = match (superset, alpha_zero) {
            (BackwardSuperset::AllWeights, true) => l.sparse,
            (BackwardSuperset::AllWeights, false) => l.dense,
            (BackwardSuperset::TopKFraction { .. }, zero) => {
                let fb = l.backward.ok_or_else(|| {
                    Error::contract(format!("layer {} has no backward budget f_B", l.layer))
                })?;
                if zero {
                    fb.max(l.sparse)
                } else {
                    fb
                }
            }
        };
        total += 2 * l.sparse + weight_grad;
    }
    Ok(total)
}

/// One sparsity snapshot and the number of samples it stands for.
#[derive(Debug, Clone)]
pub struct EpochFlops {
    pub ledger: FlopsLedger,
    pub alpha_zero: bool,
    pub samples: u64,
}

/// Running sums of sparse and dense training MACs over a run.
#[derive(Debug, Clone, Default)]
pub struct FlopsTracker {
    sparse_train: u128,
    dense_train: u128,
    last_infer: Option<(u64, u64)>,
}

impl FlopsTracker {
    pub fn record(
        &mut self,
        ledger: &FlopsLedger,
        alpha_zero: bool,
        superset: &BackwardSuperset,
        samples: u64,
    ) -> Result<()> {
        let sparse = train_sample_flops(ledger, alpha_zero, superset)?;
        self.sparse_train += sparse as u128 * samples as u128;
        self.dense_train += ledger.dense_train() as u128 * samples as u128;
        self.last_infer = Some((ledger.sparse_infer(), ledger.dense_infer()));
        Ok(())
    }

    /// Accumulated sparse/dense training ratio; 1.0 before any samples.
    pub fn train_fraction(&self) -> f64 {
        if self.dense_train == 0 {
            1.0
        } else {
            self.sparse_train as f64 / self.dense_train as f64
        }
    }

    /// Sparse/dense inference ratio of the latest snapshot.
    pub fn infer_fraction(&self) -> f64 {
        match self.last_infer {
            Some((s, d)) if d > 0 => s as f64 / d as f64,
            _ => 1.0,
        }
    }
}

/// `(train, infer)` fractions of a whole run relative to dense training.
pub fn run_flops_fraction(epochs: &[EpochFlops], superset: &BackwardSuperset) -> Result<(f64, f64)> {
    let mut tracker = FlopsTracker::default();
    for e in epochs {
        tracker.record(&e.ledger, e.alpha_zero, superset, e.samples)?;
    }
    Ok((tracker.train_fraction(), tracker.infer_fraction()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_layer(dense: u64, sparse: u64, backward: Option<u64>) -> FlopsLedger {
        FlopsLedger {
            layers: vec![LayerFlops {
                layer: 0,
                dense,
                sparse,
                backward,
            }],
        }
    }

    #[test]
    fn mode_formulas() {
        let all = BackwardSuperset::AllWeights;
        let topk = BackwardSuperset::TopKFraction { keep_fraction: 0.5 };
        let l = one_layer(100, 20, None);
        assert_eq!(train_sample_flops(&l, false, &all).unwrap(), 140);
        assert_eq!(train_sample_flops(&l, true, &all).unwrap(), 60);
        let l = one_layer(100, 20, Some(50));
        assert_eq!(train_sample_flops(&l, false, &topk).unwrap(), 90);
        assert_eq!(train_sample_flops(&l, true, &topk).unwrap(), 90);
        let l = one_layer(100, 70, Some(50));
        assert_eq!(train_sample_flops(&l, true, &topk).unwrap(), 210);
    }

    #[test]
    fn topk_without_budget_is_a_contract_error() {
        let topk = BackwardSuperset::TopKFraction { keep_fraction: 0.5 };
        assert!(matches!(
            train_sample_flops(&one_layer(10, 5, None), false, &topk),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn alpha_zero_modes_coincide_when_budget_equals_sparse() {
        let topk = BackwardSuperset::TopKFraction { keep_fraction: 0.3 };
        let l = one_layer(100, 30, Some(30));
        assert_eq!(
            train_sample_flops(&l, true, &topk).unwrap(),
            train_sample_flops(&l, true, &BackwardSuperset::AllWeights).unwrap()
        );
    }

    #[test]
    fn run_fraction_examples() {
        let all = BackwardSuperset::AllWeights;
        let dense = EpochFlops {
            ledger: one_layer(100, 100, None),
            alpha_zero: false,
            samples: 10,
        };
        assert_eq!(run_flops_fraction(&[dense.clone(), dense.clone()], &all).unwrap(), (1.0, 1.0));

        let sparse80 = EpochFlops {
            ledger: one_layer(100, 20, None),
            alpha_zero: true,
            samples: 10,
        };
        let (t, i) = run_flops_fraction(&[sparse80.clone(), sparse80], &all).unwrap();
        assert!((t - 0.2).abs() < 1e-15 && (i - 0.2).abs() < 1e-15);

        // Dense epoch (3 units) then a 50%-sparse α=0 epoch (1.5 units) over 6.
        let half = EpochFlops {
            ledger: one_layer(100, 50, None),
            alpha_zero: true,
            samples: 10,
        };
        let (t, i) = run_flops_fraction(&[dense, half], &all).unwrap();
        assert_eq!(t, 0.75);
        assert_eq!(i, 0.5);
    }

    #[test]
    fn empty_run_is_dense() {
        assert_eq!(
            run_flops_fraction(&[], &BackwardSuperset::AllWeights).unwrap(),
            (1.0, 1.0)
        );
    }
}

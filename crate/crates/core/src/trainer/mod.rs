//! Training loop: momentum SGD with warmup-cosine learning rate, smoothed
//! cross-entropy and scheduled or autotuned α.

mod autotune;
mod config;
mod sgd;

pub use autotune::{autotune_alpha, post_tune_schedule, AlphaController};
pub use config::{
    AutoTuneConfig, DataSource, FlopsGranularity, TrainConfig, DEFAULT_EPS0, DEFAULT_EPS1, DEFAULT_EPS2,
    DEFAULT_LABEL_SMOOTHING, DEFAULT_MAX_LR, DEFAULT_MOMENTUM, DEFAULT_WARMUP, DEFAULT_WEIGHT_DECAY,
};
pub use sgd::{sgd_step, Sgd};

use serde::{Deserialize, Serialize};

use crate::data::{batches, LabeledDataset};
use crate::error::{Error, Result};
use crate::flops::{FlopsLedger, FlopsTracker};
use crate::loss::{argmax_rows, smoothed_cross_entropy};
use crate::model::{batch_tensor, SparseModel};
use crate::scalar::Scalar;
use crate::schedules::LrSchedule;

const EVAL_BATCH: usize = 1000;

/// Metrics for one finished epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses.
    pub train_loss: f64,
    /// Top-1 accuracy in `[0, 1]`; `None` without an evaluation set.
    pub eval_accuracy: Option<f64>,
    /// α used during the epoch.
    pub alpha: f64,
    /// Zeros over prunable weights, dense-exempt layers excluded.
    pub global_sparsity: f64,
    /// Zeros over all weights, dense-exempt layers included.
    pub model_sparsity: f64,
    /// Zero fraction of each weighted layer, in layer order.
    pub per_layer_sparsity: Vec<f64>,
    /// Cumulative sparse/dense training MACs up to this epoch.
    pub train_flops_fraction: f64,
    /// Sparse/dense inference MACs of the current weights.
    pub infer_flops_fraction: f64,
    pub lr: f64,
}

/// Trained model together with its per-epoch records.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub model: SparseModel<T>,
    pub records: Vec<EpochRecord>,
}

/// Top-1 accuracy of `model` on `data`.
pub fn evaluate<T: Scalar>(model: &SparseModel<T>, data: &LabeledDataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("data", "evaluation set is empty"));
    }
    let mut correct = 0usize;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_BATCH).min(data.len());
        let x = batch_tensor(data.inputs.slice(ndarray::s![start..end, ..]), &model.input_shape)?;
        let pred = argmax_rows(&model.predict(&x)?)?;
        correct += pred.iter().zip(&data.labels[start..end]).filter(|(p, l)| p == l).count();
        start = end;
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Trains `model` on `train` for `cfg.epochs` epochs.
pub fn train<T: Scalar>(
    model: SparseModel<T>,
    train: &LabeledDataset<T>,
    eval: Option<&LabeledDataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_observer(model, train, eval, cfg, |_, _| Ok(()))
}

/// [`train`] with a callback after every epoch, e.g. for metrics and
/// checkpoints. An error from the callback stops training.
pub fn train_with_observer<T, F>(
    mut model: SparseModel<T>,
    train: &LabeledDataset<T>,
    eval: Option<&LabeledDataset<T>>,
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    F: FnMut(&EpochRecord, &SparseModel<T>) -> Result<()>,
{
    cfg.validate()?;
    train.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("train", "training set is empty"));
    }
    if let Some(e) = eval {
        e.validate()?;
    }
    if !cfg.pruning {
        model.disable_pruning();
    }

    let lr_sched = LrSchedule::new(cfg.max_lr, cfg.warmup, cfg.epochs);
    let mut alpha_ctl = AlphaController::new(cfg);
    let mut sgd = Sgd::new(&model, cfg.momentum, cfg.weight_decay);
    let mut flops = FlopsTracker::default();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let alpha = alpha_ctl.alpha_for_epoch(epoch)?;
        let lr = lr_sched.for_training_epoch(epoch)?;
        let diverged = |records: &Vec<EpochRecord>| Error::Diverged {
            epoch,
            last_record: records.last().cloned().map(Box::new),
        };

        let mut loss_sum = 0.0;
        for idx in batches(train.len(), cfg.batch_size, cfg.seed, epoch)? {
            let (rows, labels) = train.gather(&idx);
            let x = batch_tensor(rows.view(), &model.input_shape)?;
            let (logits, cache) = model.forward(&x)?;
            let (loss, dlogits) = smoothed_cross_entropy(&logits, &labels, cfg.label_smoothing)?;
            if !loss.is_finite() {
                return Err(diverged(&records));
            }
            loss_sum += loss * idx.len() as f64;
            if cfg.flops_granularity == FlopsGranularity::Iteration {
                let ledger = FlopsLedger::from_forward(&model, &cfg.backward_superset);
                flops.record(&ledger, alpha == 0.0, &cfg.backward_superset, idx.len() as u64)?;
            }
            let grads = model.backward(&cache, &dlogits, alpha, &cfg.backward_superset)?;
            match sgd.step(&mut model, &grads, lr) {
                Err(Error::NonFinite(_)) => return Err(diverged(&records)),
                other => other?,
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(diverged(&records));
        }

        let report = model.sparsity_report();
        if cfg.flops_granularity == FlopsGranularity::Epoch {
            let ledger = FlopsLedger::from_model(&model, &cfg.backward_superset);
            flops.record(&ledger, alpha == 0.0, &cfg.backward_superset, train.len() as u64)?;
        }
        let infer_ledger = FlopsLedger::from_model(&model, &cfg.backward_superset);
        let infer_flops_fraction = if infer_ledger.dense_infer() == 0 {
            1.0
        } else {
            infer_ledger.sparse_infer() as f64 / infer_ledger.dense_infer() as f64
        };
        let eval_accuracy = eval.map(|e| evaluate(&model, e)).transpose()?;
        alpha_ctl.end_epoch(epoch, train_loss)?;

        let record = EpochRecord {
            epoch,
            train_loss,
            eval_accuracy,
            alpha,
            global_sparsity: report.global_sparsity,
            model_sparsity: report.model_sparsity,
            per_layer_sparsity: report.per_layer.iter().map(|l| l.zero_fraction).collect(),
            train_flops_fraction: flops.train_fraction(),
            infer_flops_fraction,
            lr,
        };
        observer(&record, &model)?;
        records.push(record);
    }
    Ok(TrainOutcome { model, records })
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_idx, synth_gaussian_blobs, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::model::NetworkSpec;
use crate::prune::BackwardSuperset;
use crate::scalar::Scalar;
use crate::schedules::{AnnealKind, AnnealSchedule};

pub const DEFAULT_MOMENTUM: f64 = 0.875;
pub const DEFAULT_MAX_LR: f64 = 0.256;
pub const DEFAULT_WARMUP: usize = 5;
/// 2^-15.
pub const DEFAULT_WEIGHT_DECAY: f64 = 3.0517578125e-5;
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;

pub const DEFAULT_EPS0: f64 = 0.01;
pub const DEFAULT_EPS1: f64 = 0.05;
pub const DEFAULT_EPS2: f64 = 0.005;

/// Closed-loop α tuning during the first `tuning_epochs` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoTuneConfig {
    pub tuning_epochs: usize,
    /// Per-epoch mean training loss of a dense run with the same config.
    #[serde(default)]
    pub ref_loss: Vec<f64>,
    /// File to read `ref_loss` from when the vector is not inlined.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_loss_path: Option<PathBuf>,
    /// Loss tolerance.
    #[serde(default = "eps0")]
    pub eps0: f64,
    /// Multiplicative α increase.
    #[serde(default = "eps1")]
    pub eps1: f64,
    /// Multiplicative α decrease.
    #[serde(default = "eps2")]
    pub eps2: f64,
    /// α becomes 0 at the end of this epoch and stays there.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reset_epoch: Option<usize>,
}

fn eps0() -> f64 {
    DEFAULT_EPS0
}
fn eps1() -> f64 {
    DEFAULT_EPS1
}
fn eps2() -> f64 {
    DEFAULT_EPS2
}

impl AutoTuneConfig {
    pub fn new(tuning_epochs: usize, ref_loss: Vec<f64>) -> Self {
        Self {
            tuning_epochs,
            ref_loss,
            ref_loss_path: None,
            eps0: DEFAULT_EPS0,
            eps1: DEFAULT_EPS1,
            eps2: DEFAULT_EPS2,
            reset_epoch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ref_loss.len() < self.tuning_epochs {
            return Err(Error::config(
                "autotune.ref_loss",
                format!("needs {} entries, has {}", self.tuning_epochs, self.ref_loss.len()),
            ));
        }
        for (name, v) in [("eps0", self.eps0), ("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("autotune.{name}"), "must be positive"));
            }
        }
        if self.eps2 >= 1.0 {
            return Err(Error::config("autotune.eps2", "must be below 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlopsGranularity {
    /// One sparsity snapshot at the end of each epoch.
    #[default]
    Epoch,
    /// One snapshot per iteration, taken from the forward masks.
    Iteration,
}

/// Where training and evaluation samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// IDX image/label pairs; relative paths resolve against the data
    /// directory.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_images: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_labels: Option<PathBuf>,
        /// Use only the first `train_limit` training samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eval_limit: Option<usize>,
    },
    /// Gaussian blobs; evaluation uses a second draw with `seed + 1`.
    Blobs {
        num_classes: usize,
        dims: usize,
        per_class: usize,
        seed: u64,
        #[serde(default)]
        eval_per_class: usize,
    },
}

impl DataSource {
    pub fn load<T: Scalar>(&self, data_dir: &Path) -> Result<(LabeledDataset<T>, Option<LabeledDataset<T>>)> {
        match self {
            DataSource::Idx {
                train_images,
                train_labels,
                eval_images,
                eval_labels,
                train_limit,
                eval_limit,
            } => {
                let mut train = load_idx::<T>(&data_dir.join(train_images), &data_dir.join(train_labels))?;
                if let Some(n) = train_limit {
                    train = train.head(*n);
                }
                let eval = match (eval_images, eval_labels) {
                    (Some(i), Some(l)) => {
                        let mut e = load_idx::<T>(&data_dir.join(i), &data_dir.join(l))?.with_split(Split::Eval);
                        if let Some(n) = eval_limit {
                            e = e.head(*n);
                        }
                        Some(e)
                    }
                    (None, None) => None,
                    _ => {
                        return Err(Error::config(
                            "data.eval_images",
                            "eval_images and eval_labels must be given together",
                        ))
                    }
                };
                Ok((train, eval))
            }
            DataSource::Blobs {
                num_classes,
                dims,
                per_class,
                seed,
                eval_per_class,
            } => {
                let train = synth_gaussian_blobs(*num_classes, *dims, *per_class, *seed)?;
                let eval = if *eval_per_class > 0 {
                    Some(synth_gaussian_blobs(*num_classes, *dims, *eval_per_class, seed.wrapping_add(1))?.with_split(Split::Eval))
                } else {
                    None
                };
                Ok((train, eval))
            }
        }
    }
}

/// Full description of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkSpec,
    pub data: DataSource,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "momentum")]
    pub momentum: f64,
    #[serde(default = "max_lr")]
    pub max_lr: f64,
    #[serde(default = "warmup")]
    pub warmup: usize,
    /// L2 decay applied to weights and threshold parameters, not biases.
    #[serde(default = "weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "label_smoothing")]
    pub label_smoothing: f64,
    pub alpha0: f64,
    pub schedule: AnnealSchedule,
    /// First epoch trained with α exactly zero.
    #[serde(default)]
    pub zero_from: Option<usize>,
    #[serde(default)]
    pub autotune: Option<AutoTuneConfig>,
    pub seed: u64,
    #[serde(default)]
    pub backward_superset: BackwardSuperset,
    /// `false` trains a dense baseline: every layer is dense-exempt.
    #[serde(default = "yes")]
    pub pruning: bool,
    #[serde(default)]
    pub flops_granularity: FlopsGranularity,
    /// Write a checkpoint every N epochs (the final epoch is always written).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
}

fn momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn max_lr() -> f64 {
    DEFAULT_MAX_LR
}
fn warmup() -> usize {
    DEFAULT_WARMUP
}
fn weight_decay() -> f64 {
    DEFAULT_WEIGHT_DECAY
}
fn label_smoothing() -> f64 {
    DEFAULT_LABEL_SMOOTHING
}
fn yes() -> bool {
    true
}

impl TrainConfig {
    /// Config with every optimizer default and sigmoid-cosine annealing.
    pub fn new(network: NetworkSpec, data: DataSource, epochs: usize, batch_size: usize, alpha0: f64, seed: u64) -> Self {
        Self {
            network,
            data,
            epochs,
            batch_size,
            momentum: DEFAULT_MOMENTUM,
            max_lr: DEFAULT_MAX_LR,
            warmup: DEFAULT_WARMUP,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            alpha0,
            schedule: AnnealSchedule::new(AnnealKind::SigmoidCosine),
            zero_from: None,
            autotune: None,
            seed,
            backward_superset: BackwardSuperset::AllWeights,
            pruning: true,
            flops_granularity: FlopsGranularity::Epoch,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::config("alpha0", format!("{} is outside [0, 1]", self.alpha0)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.max_lr >= 0.0) || !self.max_lr.is_finite() {
            return Err(Error::config("max_lr", "must be non-negative"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must lie in [0, 1)"));
        }
        if !self.network.s_init.is_finite() {
            return Err(Error::config("network.s_init", "must be finite"));
        }
        self.schedule
            .validate()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        self.backward_superset
            .validate()
            .map_err(|e| Error::config("backward_superset.keep_fraction", e.to_string()))?;
        if let Some(at) = &self.autotune {
            at.validate()?;
            if at.tuning_epochs > self.epochs {
                return Err(Error::config("autotune.tuning_epochs", "exceeds epochs"));
            }
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::config("checkpoint_every", "must be at least 1"));
        }
        Ok(())
    }
}

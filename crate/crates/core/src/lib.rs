//! Training-time sparsification with learnable soft thresholds and a
//! scheduled gradient for pruned weights.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flops;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod prune;
pub mod scalar;
pub mod schedules;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use data::LabeledDataset;
pub use error::{Error, Result};
pub use flops::{FlopsLedger, FlopsTracker};
pub use model::{LayerSpec, NetworkSpec, SparseModel, SparsityReport};
pub use prune::{prune_backward, prune_forward, BackwardSuperset, PruneForwardResult};
pub use scalar::Scalar;
pub use schedules::{AnnealKind, AnnealSchedule, LrSchedule};
pub use trainer::{train, EpochRecord, TrainConfig, TrainOutcome};

pub type Model32 = SparseModel<f32>;
pub type Model64 = SparseModel<f64>;
pub type Dataset32 = LabeledDataset<f32>;
pub type Dataset64 = LabeledDataset<f64>;

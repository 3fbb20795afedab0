//! Versioned JSON checkpoints of model state.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NetworkSpec, SparseModel};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "autosparse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerState {
    /// Position in the network's layer list.
    pub index: usize,
    pub shape: Vec<usize>,
    /// Row-major raw weights (before thresholding).
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub s: f64,
    pub dense_exempt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    /// Scalar type the model was trained with.
    pub dtype: String,
    /// Number of finished epochs.
    pub epoch: usize,
    /// α of the last finished epoch.
    pub alpha: f64,
    pub seed: u64,
    pub network: NetworkSpec,
    pub layers: Vec<LayerState>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &SparseModel<T>, s_init: f64, epoch: usize, alpha: f64, seed: u64) -> Self {
        let layers = model
            .prunable_layers()
            .map(|(index, p)| LayerState {
                index,
                shape: p.weights.shape().to_vec(),
                weights: p.weights.iter().map(|w| w.as_f64()).collect(),
                bias: p.bias.iter().map(|b| b.as_f64()).collect(),
                s: p.s.as_f64(),
                dense_exempt: p.dense_exempt,
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dtype: T::DTYPE.to_string(),
            epoch,
            alpha,
            seed,
            network: model.spec(s_init),
            layers,
        }
    }

    /// Rebuilds the model. Loading into a narrower scalar type rounds.
    pub fn to_model<T: Scalar>(&self) -> Result<SparseModel<T>> {
        let mut model = SparseModel::<T>::new(&self.network, self.seed)?;
        let expected: Vec<usize> = model.prunable_layers().map(|(i, _)| i).collect();
        let got: Vec<usize> = self.layers.iter().map(|l| l.index).collect();
        if expected != got {
            return Err(Error::contract(format!(
                "checkpoint layers {got:?} do not match network layers {expected:?}"
            )));
        }
        for state in &self.layers {
            let p = model.layers[state.index]
                .prunable_mut()
                .ok_or_else(|| Error::contract("checkpoint layer is not prunable"))?;
            if state.shape != p.weights.shape() || state.bias.len() != p.bias.len() {
                return Err(Error::contract(format!("layer {} shape mismatch", state.index)));
            }
            p.weights = ArrayD::from_shape_vec(IxDyn(&state.shape), state.weights.iter().map(|&w| T::of(w)).collect())
                .map_err(|e| Error::contract(format!("layer {}: {e}", state.index)))?;
            p.bias = Array1::from_iter(state.bias.iter().map(|&b| T::of(b)));
            p.s = T::of(state.s);
            p.dense_exempt = state.dense_exempt;
        }
        Ok(model)
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format {
                path: path.into(),
                field: "format",
                reason: format!("expected {CHECKPOINT_FORMAT}, found {}", ckpt.format),
            });
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: path.into(),
                field: "version",
                reason: format!("unsupported version {}", ckpt.version),
            });
        }
        Ok(ckpt)
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid("path", "has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

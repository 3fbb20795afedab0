use ndarray::{Array1, ArrayD};

use crate::error::{Error, Result};
use crate::model::{ModelGradients, SparseModel};
use crate::scalar::Scalar;

/// One momentum-SGD update in place:
/// `buf ← momentum·buf + (grad + λ·param)`, `param ← param - lr·buf`.
pub fn sgd_step<T: Scalar>(param: &mut T, grad: T, buf: &mut T, lr: f64, weight_decay: f64, momentum: f64) -> Result<()> {
    let d = grad + T::of(weight_decay) * *param;
    *buf = T::of(momentum) * *buf + d;
    *param -= T::of(lr) * *buf;
    if param.is_finite() && buf.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("parameter update"))
    }
}

fn step_slice<T: Scalar>(params: &mut [T], grads: &[T], bufs: &mut [T], lr: f64, wd: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != bufs.len() {
        return Err(Error::contract("parameter, gradient and buffer lengths differ"));
    }
    for ((p, &g), b) in params.iter_mut().zip(grads).zip(bufs.iter_mut()) {
        sgd_step(p, g, b, lr, wd, momentum)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Buffers<T: Scalar> {
    weights: ArrayD<T>,
    bias: Array1<T>,
    s: T,
}

/// Momentum buffers for every prunable layer.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Option<Buffers<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(model: &SparseModel<T>, momentum: f64, weight_decay: f64) -> Self {
        let buffers = model
            .layers
            .iter()
            .map(|l| {
                l.prunable().map(|p| Buffers {
                    weights: ArrayD::zeros(p.weights.raw_dim()),
                    bias: Array1::zeros(p.bias.len()),
                    s: T::zero(),
                })
            })
            .collect();
        Self {
            momentum,
            weight_decay,
            buffers,
        }
    }

    /// Applies `grads` to `model`. Weight decay covers weights and `s`;
    /// biases are not decayed.
    pub fn step(&mut self, model: &mut SparseModel<T>, grads: &ModelGradients<T>, lr: f64) -> Result<()> {
        if grads.layers.len() != model.layers.len() || self.buffers.len() != model.layers.len() {
            return Err(Error::contract("gradients do not match the model"));
        }
        for ((layer, g), buf) in model.layers.iter_mut().zip(&grads.layers).zip(&mut self.buffers) {
            let (Some(p), Some(g), Some(buf)) = (layer.prunable_mut(), g.as_ref(), buf.as_mut()) else {
                continue;
            };
            let (pw, gw, bw) = (
                p.weights.as_slice_mut().ok_or_else(|| Error::contract("weights not contiguous"))?,
                g.weights.as_slice().ok_or_else(|| Error::contract("gradient not contiguous"))?,
                buf.weights.as_slice_mut().ok_or_else(|| Error::contract("buffer not contiguous"))?,
            );
            step_slice(pw, gw, bw, lr, self.weight_decay, self.momentum)?;
            step_slice(
                p.bias.as_slice_mut().expect("owned bias"),
                g.bias.as_slice().ok_or_else(|| Error::contract("bias gradient not contiguous"))?,
                buf.bias.as_slice_mut().expect("owned buffer"),
                lr,
                0.0,
                self.momentum,
            )?;
            if let Some(ds) = g.s {
                sgd_step(&mut p.s, T::of(ds), &mut buf.s, lr, self.weight_decay, self.momentum)?;
            }
        }
        Ok(())
    }
}

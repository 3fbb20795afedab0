//! Layer stack whose prunable layers compute with soft-thresholded weights.

use ndarray::{s, Array1, Array2, Array4, ArrayD, ArrayView2, Axis, Ix2, Ix4, IxDyn};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::{prune_backward, prune_forward, BackwardSuperset, PruneForwardResult};
use crate::scalar::{sigmoid, Scalar};

pub const DEFAULT_S_INIT: f64 = -5.0;

/// Architecture entry as written in configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Affine {
        inputs: usize,
        outputs: usize,
        #[serde(default)]
        dense_exempt: bool,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default)]
        dense_exempt: bool,
    },
    Relu,
    Flatten,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Per-sample input shape: `[features]` or `[channels, height, width]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_s_init")]
    pub s_init: f64,
}

fn default_s_init() -> f64 {
    DEFAULT_S_INIT
}

impl NetworkSpec {
    /// Fully connected ReLU network with the given widths.
    pub fn mlp(widths: &[usize]) -> Self {
        let mut layers = Vec::new();
        for (i, pair) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::Affine {
                inputs: pair[0],
                outputs: pair[1],
                dense_exempt: false,
            });
        }
        Self {
            input_shape: vec![widths[0]],
            layers,
            s_init: DEFAULT_S_INIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// Weights, bias and threshold parameter of one layer.
#[derive(Debug, Clone)]
pub struct PrunableLayer<T: Scalar> {
    /// `out × in` for affine, `out × in × k × k` for convolution.
    pub weights: ArrayD<T>,
    pub bias: Array1<T>,
    pub s: T,
    pub dense_exempt: bool,
    pub last_forward: Option<PruneForwardResult<T, IxDyn>>,
}

impl<T: Scalar> PrunableLayer<T> {
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Weights used by the forward pass.
    pub fn effective_weights(&self) -> Result<PruneForwardResult<T, IxDyn>> {
        if self.dense_exempt {
            let n = self.weights.len();
            return Ok(PruneForwardResult {
                sparse_weights: self.weights.clone(),
                active_mask: ArrayD::from_elem(self.weights.raw_dim(), true),
                threshold: T::zero(),
                active_count: n,
                active_fraction: if n == 0 { 0.0 } else { 1.0 },
            });
        }
        prune_forward(&self.weights, self.s)
    }

    /// Masked-entry count at the current threshold, without building the
    /// sparse tensor.
    pub fn zero_count(&self) -> usize {
        if self.dense_exempt {
            return 0;
        }
        let t = T::of(sigmoid(self.s.as_f64()));
        self.weights.iter().filter(|w| w.abs() - t <= T::zero()).count()
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Affine(PrunableLayer<T>),
    Conv2d(PrunableLayer<T>, ConvGeometry),
    Relu,
    Flatten,
}

impl<T: Scalar> Layer<T> {
    pub fn prunable(&self) -> Option<&PrunableLayer<T>> {
        match self {
            Layer::Affine(p) | Layer::Conv2d(p, _) => Some(p),
            _ => None,
        }
    }

    pub fn prunable_mut(&mut self) -> Option<&mut PrunableLayer<T>> {
        match self {
            Layer::Affine(p) | Layer::Conv2d(p, _) => Some(p),
            _ => None,
        }
    }

    /// Multiply-accumulates per sample contributed by each weight.
    pub fn macs_per_weight(&self) -> u64 {
        match self {
            Layer::Affine(_) => 1,
            Layer::Conv2d(_, g) => (g.out_h * g.out_w) as u64,
            _ => 0,
        }
    }
}

/// Per-layer inputs saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    inputs: Vec<ArrayD<T>>,
    cols: Vec<Option<Array2<T>>>,
    prune: Vec<Option<PruneForwardResult<T, IxDyn>>>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients<T: Scalar> {
    pub weights: ArrayD<T>,
    pub bias: Array1<T>,
    /// `None` for dense-exempt layers.
    pub s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelGradients<T: Scalar> {
    /// Indexed like [`SparseModel::layers`]; `None` for parameter-free layers.
    pub layers: Vec<Option<LayerGradients<T>>>,
    pub input: ArrayD<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub zero_fraction: f64,
    pub zeros: usize,
    pub params: usize,
    pub dense_exempt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub per_layer: Vec<LayerSparsity>,
    /// Zeros over prunable parameters; dense-exempt layers excluded.
    pub global_sparsity: f64,
    /// Zeros over all layer weights, dense-exempt layers included.
    pub model_sparsity: f64,
}

#[derive(Debug, Clone)]
pub struct SparseModel<T: Scalar> {
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> SparseModel<T> {
    /// Builds the network with Kaiming-uniform (fan-in, ReLU gain) weights,
    /// zero biases and every threshold parameter at `spec.s_init`.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = spec.input_shape.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config("network.input_shape", "must be non-empty and positive"));
        }
        let s_init = T::of(spec.s_init);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, ls) in spec.layers.iter().enumerate() {
            let field = format!("network.layers[{i}]");
            let layer = match *ls {
                LayerSpec::Affine {
                    inputs,
                    outputs,
                    dense_exempt,
                } => {
                    if shape != [inputs] {
                        return Err(Error::config(
                            field,
                            format!("affine expects [{inputs}] but receives {shape:?}"),
                        ));
                    }
                    if outputs == 0 {
                        return Err(Error::config(field, "outputs must be positive"));
                    }
                    shape = vec![outputs];
                    let w = kaiming_uniform(&mut rng, &[outputs, inputs], inputs);
                    Layer::Affine(PrunableLayer {
                        weights: w,
                        bias: Array1::zeros(outputs),
                        s: s_init,
                        dense_exempt,
                        last_forward: None,
                    })
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    dense_exempt,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(Error::config(
                            field,
                            format!("conv2d expects [{in_channels}, h, w] but receives {shape:?}"),
                        ));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(Error::config(field, "kernel, stride and out_channels must be positive"));
                    }
                    let (in_h, in_w) = (shape[1], shape[2]);
                    if in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
                        return Err(Error::config(field, "kernel larger than padded input"));
                    }
                    let out_h = (in_h + 2 * padding - kernel) / stride + 1;
                    let out_w = (in_w + 2 * padding - kernel) / stride + 1;
                    shape = vec![out_channels, out_h, out_w];
                    let fan_in = in_channels * kernel * kernel;
                    let w = kaiming_uniform(&mut rng, &[out_channels, in_channels, kernel, kernel], fan_in);
                    let geom = ConvGeometry {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        in_h,
                        in_w,
                        out_h,
                        out_w,
                    };
                    Layer::Conv2d(
                        PrunableLayer {
                            weights: w,
                            bias: Array1::zeros(out_channels),
                            s: s_init,
                            dense_exempt,
                            last_forward: None,
                        },
                        geom,
                    )
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => {
                    shape = vec![shape.iter().product()];
                    Layer::Flatten
                }
            };
            layers.push(layer);
        }
        Ok(Self {
            input_shape: spec.input_shape.clone(),
            layers,
        })
    }

    /// Architecture of this model.
    pub fn spec(&self, s_init: f64) -> NetworkSpec {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Affine(p) => LayerSpec::Affine {
                    inputs: p.weights.shape()[1],
                    outputs: p.weights.shape()[0],
                    dense_exempt: p.dense_exempt,
                },
                Layer::Conv2d(p, g) => LayerSpec::Conv2d {
                    in_channels: g.in_channels,
                    out_channels: g.out_channels,
                    kernel: g.kernel,
                    stride: g.stride,
                    padding: g.padding,
                    dense_exempt: p.dense_exempt,
                },
                Layer::Relu => LayerSpec::Relu,
                Layer::Flatten => LayerSpec::Flatten,
            })
            .collect();
        NetworkSpec {
            input_shape: self.input_shape.clone(),
            layers,
            s_init,
        }
    }

    pub fn prunable_layers(&self) -> impl Iterator<Item = (usize, &PrunableLayer<T>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.prunable().map(|p| (i, p)))
    }

    /// Marks every layer dense-exempt, turning the model into a dense baseline.
    pub fn disable_pruning(&mut self) {
        for l in &mut self.layers {
            if let Some(p) = l.prunable_mut() {
                p.dense_exempt = true;
            }
        }
    }

    pub fn set_threshold_params(&mut self, s: T) {
        for l in &mut self.layers {
            if let Some(p) = l.prunable_mut() {
                p.s = s;
            }
        }
    }

    fn check_batch(&self, batch: &ArrayD<T>) -> Result<()> {
        if batch.ndim() != self.input_shape.len() + 1 || batch.shape()[1..] != self.input_shape[..] {
            return Err(Error::contract(format!(
                "batch shape {:?} does not match input shape {:?}",
                batch.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    /// Forward pass; caches each prunable layer's mask in `last_forward`.
    pub fn forward(&mut self, batch: &ArrayD<T>) -> Result<(ArrayD<T>, ForwardCache<T>)> {
        let (logits, cache) = self.forward_inner(batch, true)?;
        for (layer, pr) in self.layers.iter_mut().zip(cache.prune.iter()) {
            if let Some(p) = layer.prunable_mut() {
                p.last_forward = pr.clone();
            }
        }
        Ok((logits, cache))
    }

    /// Forward pass without caching, for evaluation.
    pub fn predict(&self, batch: &ArrayD<T>) -> Result<ArrayD<T>> {
        Ok(self.forward_inner(batch, false)?.0)
    }

    fn forward_inner(&self, batch: &ArrayD<T>, keep: bool) -> Result<(ArrayD<T>, ForwardCache<T>)> {
        self.check_batch(batch)?;
        let n = batch.shape()[0];
        let mut x = batch.clone();
        let mut cache = ForwardCache {
            inputs: Vec::new(),
            cols: Vec::new(),
            prune: Vec::new(),
        };
        for layer in &self.layers {
            let mut col = None;
            let mut pr = None;
            let y = match layer {
                Layer::Affine(p) => {
                    let fw = p.effective_weights()?;
                    let w2 = fw.sparse_weights.view().into_dimensionality::<Ix2>().map_err(shape_err)?;
                    let x2 = x.view().into_dimensionality::<Ix2>().map_err(shape_err)?;
                    let mut y = x2.dot(&w2.t());
                    y += &p.bias;
                    pr = Some(fw);
                    y.into_dyn()
                }
                Layer::Conv2d(p, g) => {
                    let fw = p.effective_weights()?;
                    let x4 = x.view().into_dimensionality::<Ix4>().map_err(shape_err)?;
                    let cols = im2col(&x4.to_owned(), g);
                    let wflat = fw
                        .sparse_weights
                        .view()
                        .into_shape_with_order((g.out_channels, g.patch_len()))
                        .map_err(shape_err)?;
                    let mut yflat = cols.dot(&wflat.t());
                    yflat += &p.bias;
                    let y = rows_to_nchw(&yflat, n, g);
                    if keep {
                        col = Some(cols);
                    }
                    pr = Some(fw);
                    y.into_dyn()
                }
                Layer::Relu => x.mapv(|v| if v > T::zero() { v } else { T::zero() }),
                Layer::Flatten => {
                    let rest: usize = x.shape()[1..].iter().product();
                    x.to_shape((n, rest)).map_err(shape_err)?.to_owned().into_dyn()
                }
            };
            if keep {
                cache.inputs.push(std::mem::replace(&mut x, y));
                cache.cols.push(col);
                cache.prune.push(pr);
            } else {
                x = y;
            }
        }
        Ok((x, cache))
    }

    /// Backpropagates `dlogits` (gradient of the loss with respect to the
    /// logits) through the cached forward pass.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dlogits: &ArrayD<T>,
        alpha: f64,
        superset: &BackwardSuperset,
    ) -> Result<ModelGradients<T>> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::contract("backward called without a matching forward cache"));
        }
        let mut grads: Vec<Option<LayerGradients<T>>> = vec![None; self.layers.len()];
        let mut dy = dlogits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let dx = match layer {
                Layer::Affine(p) => {
                    let fw = p
                        .last_forward
                        .as_ref()
                        .ok_or_else(|| Error::contract("affine layer has no cached forward mask"))?;
                    let dy2 = dy.view().into_dimensionality::<Ix2>().map_err(shape_err)?;
                    let x2 = x.view().into_dimensionality::<Ix2>().map_err(shape_err)?;
                    let w2 = fw.sparse_weights.view().into_dimensionality::<Ix2>().map_err(shape_err)?;
                    let dw_sparse = dy2.t().dot(&x2).into_dyn();
                    let db = dy2.sum_axis(Axis(0));
                    let dx = dy2.dot(&w2).into_dyn();
                    grads[i] = Some(param_grads(p, fw, dw_sparse, db, alpha, superset)?);
                    dx
                }
                Layer::Conv2d(p, g) => {
                    let fw = p
                        .last_forward
                        .as_ref()
                        .ok_or_else(|| Error::contract("conv layer has no cached forward mask"))?;
                    let cols = cache.cols[i]
                        .as_ref()
                        .ok_or_else(|| Error::contract("conv layer has no cached patches"))?;
                    let n = x.shape()[0];
                    let dy4 = dy.view().into_dimensionality::<Ix4>().map_err(shape_err)?;
                    let dyflat = nchw_to_rows(&dy4, g);
                    let wflat = fw
                        .sparse_weights
                        .view()
                        .into_shape_with_order((g.out_channels, g.patch_len()))
                        .map_err(shape_err)?;
                    let dw_sparse = dyflat
                        .t()
                        .dot(cols)
                        .into_shape_with_order(IxDyn(&[g.out_channels, g.in_channels, g.kernel, g.kernel]))
                        .map_err(shape_err)?;
                    let db = dyflat.sum_axis(Axis(0));
                    let dcols = dyflat.dot(&wflat);
                    let dx = col2im(&dcols, n, g).into_dyn();
                    grads[i] = Some(param_grads(p, fw, dw_sparse, db, alpha, superset)?);
                    dx
                }
                Layer::Relu => {
                    let mut dx = dy.clone();
                    dx.zip_mut_with(x, |d, &xi| {
                        if xi <= T::zero() {
                            *d = T::zero();
                        }
                    });
                    dx
                }
                Layer::Flatten => dy.to_shape(x.raw_dim()).map_err(shape_err)?.to_owned(),
            };
            dy = dx;
        }
        Ok(ModelGradients {
            layers: grads,
            input: dy,
        })
    }

    pub fn sparsity_report(&self) -> SparsityReport {
        let mut per_layer = Vec::new();
        let (mut zeros, mut prunable, mut all) = (0usize, 0usize, 0usize);
        for (i, p) in self.prunable_layers() {
            let z = p.zero_count();
            let n = p.param_count();
            all += n;
            if !p.dense_exempt {
                zeros += z;
                prunable += n;
            }
            per_layer.push(LayerSparsity {
                layer: i,
                zero_fraction: if n == 0 { 0.0 } else { z as f64 / n as f64 },
                zeros: z,
                params: n,
                dense_exempt: p.dense_exempt,
            });
        }
        SparsityReport {
            per_layer,
            global_sparsity: if prunable == 0 { 0.0 } else { zeros as f64 / prunable as f64 },
            model_sparsity: if all == 0 { 0.0 } else { zeros as f64 / all as f64 },
        }
    }
}

fn shape_err(e: ndarray::ShapeError) -> Error {
    Error::contract(format!("tensor shape: {e}"))
}

fn param_grads<T: Scalar>(
    p: &PrunableLayer<T>,
    fw: &PruneForwardResult<T, IxDyn>,
    dw_sparse: ArrayD<T>,
    db: Array1<T>,
    alpha: f64,
    superset: &BackwardSuperset,
) -> Result<LayerGradients<T>> {
    if p.dense_exempt {
        return Ok(LayerGradients {
            weights: dw_sparse,
            bias: db,
            s: None,
        });
    }
    let (dw, ds) = prune_backward(&dw_sparse, fw, alpha, superset, &p.weights, p.s)?;
    Ok(LayerGradients {
        weights: dw,
        bias: db,
        s: Some(ds),
    })
}

fn kaiming_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new(-bound, bound).expect("finite positive bound");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || T::of(dist.sample(rng)))
}

/// `(N·OH·OW) × (C·K·K)` patch matrix; padding reads as zero.
fn im2col<T: Scalar>(x: &Array4<T>, g: &ConvGeometry) -> Array2<T> {
    let n = x.shape()[0];
    let k = g.kernel;
    let mut cols = Array2::zeros((n * g.out_h * g.out_w, g.patch_len()));
    for b in 0..n {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let row = (b * g.out_h + oh) * g.out_w + ow;
                let mut out = cols.row_mut(row);
                let mut col = 0;
                for c in 0..g.in_channels {
                    for kh in 0..k {
                        for kw in 0..k {
                            let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                            let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                            if ih >= 0 && iw >= 0 && (ih as usize) < g.in_h && (iw as usize) < g.in_w {
                                out[col] = x[[b, c, ih as usize, iw as usize]];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(dcols: &Array2<T>, n: usize, g: &ConvGeometry) -> Array4<T> {
    let k = g.kernel;
    let mut dx = Array4::zeros((n, g.in_channels, g.in_h, g.in_w));
    for b in 0..n {
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let row = dcols.row((b * g.out_h + oh) * g.out_w + ow);
                let mut col = 0;
                for c in 0..g.in_channels {
                    for kh in 0..k {
                        for kw in 0..k {
                            let ih = (oh * g.stride + kh) as isize - g.padding as isize;
                            let iw = (ow * g.stride + kw) as isize - g.padding as isize;
                            if ih >= 0 && iw >= 0 && (ih as usize) < g.in_h && (iw as usize) < g.in_w {
                                dx[[b, c, ih as usize, iw as usize]] += row[col];
                            }
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn rows_to_nchw<T: Scalar>(rows: &Array2<T>, n: usize, g: &ConvGeometry) -> Array4<T> {
    Array4::from_shape_fn((n, g.out_channels, g.out_h, g.out_w), |(b, c, h, w)| {
        rows[[(b * g.out_h + h) * g.out_w + w, c]]
    })
}

fn nchw_to_rows<T: Scalar>(y: &ndarray::ArrayView4<T>, g: &ConvGeometry) -> Array2<T> {
    let n = y.shape()[0];
    let mut rows = Array2::zeros((n * g.out_h * g.out_w, g.out_channels));
    for b in 0..n {
        for c in 0..g.out_channels {
            let plane = y.slice(s![b, c, .., ..]);
            for ((h, w), &v) in plane.indexed_iter() {
                rows[[(b * g.out_h + h) * g.out_w + w, c]] = v;
            }
        }
    }
    rows
}

/// Row-major view of an `N × features` batch as the model's input tensor.
pub fn batch_tensor<T: Scalar>(rows: ArrayView2<T>, input_shape: &[usize]) -> Result<ArrayD<T>> {
    let mut shape = vec![rows.nrows()];
    shape.extend_from_slice(input_shape);
    rows.to_owned()
        .into_shape_with_order(IxDyn(&shape))
        .map_err(shape_err)
}

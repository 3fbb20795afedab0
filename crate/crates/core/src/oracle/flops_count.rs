use crate::model::{Layer, SparseModel};
use crate::prune::BackwardSuperset;
use crate::scalar::Scalar;

/// Dense MACs per sample by walking the layer's loop nest.
pub fn brute_force_dense_macs<T: Scalar>(layer: &Layer<T>) -> u64 {
    count_loop_nest(layer, |_| true)
}

/// Training MACs per sample: the forward, input-gradient and weight-gradient
/// products are each walked as explicit loop nests, counting only MACs whose
/// weight is in the relevant index set.
pub fn brute_force_train_macs<T: Scalar>(
    model: &SparseModel<T>,
    alpha_zero: bool,
    superset: &BackwardSuperset,
) -> u64 {
    let mut total = 0u64;
    for layer in &model.layers {
        let Some(p) = layer.prunable() else { continue };
        let n = p.weights.len();
        let w: Vec<f64> = p.weights.iter().map(|v| v.as_f64()).collect();
        let threshold = T::of(1.0 / (1.0 + (-p.s.as_f64()).exp()));
        let active: Vec<bool> = if p.dense_exempt {
            vec![true; n]
        } else {
            p.weights.iter().map(|&v| v.abs() > threshold).collect()
        };
        let in_topk = match (superset, p.dense_exempt) {
            (BackwardSuperset::TopKFraction { keep_fraction }, false) => {
                let k = ((keep_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| w[b].abs().partial_cmp(&w[a].abs()).unwrap());
                let mut keep = vec![false; n];
                for &i in &order[..k] {
                    keep[i] = true;
                }
                keep
            }
            _ => vec![true; n],
        };
        let grad_set: Vec<bool> = match (superset, alpha_zero) {
            (BackwardSuperset::AllWeights, true) => active.clone(),
            (BackwardSuperset::AllWeights, false) => vec![true; n],
            (BackwardSuperset::TopKFraction { .. }, false) => in_topk,
            (BackwardSuperset::TopKFraction { .. }, true) => {
                active.iter().zip(&in_topk).map(|(a, b)| *a || *b).collect()
            }
        };
        let forward = count_loop_nest(layer, |i| active[i]);
        let input_grad = count_loop_nest(layer, |i| active[i]);
        let weight_grad = count_loop_nest(layer, |i| grad_set[i]);
        total += forward + input_grad + weight_grad;
    }
    total
}

fn count_loop_nest<T: Scalar>(layer: &Layer<T>, include: impl Fn(usize) -> bool) -> u64 {
    let mut count = 0u64;
    match layer {
        Layer::Affine(p) => {
            let (outs, ins) = (p.weights.shape()[0], p.weights.shape()[1]);
            for o in 0..outs {
                for i in 0..ins {
                    if include(o * ins + i) {
                        count += 1;
                    }
                }
            }
        }
        Layer::Conv2d(_, g) => {
            let k = g.kernel;
            for oc in 0..g.out_channels {
                for _oh in 0..g.out_h {
                    for _ow in 0..g.out_w {
                        for ic in 0..g.in_channels {
                            for kh in 0..k {
                                for kw in 0..k {
                                    if include(((oc * g.in_channels + ic) * k + kh) * k + kw) {
                                        count += 1;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Layer::Relu | Layer::Flatten => {}
    }
    count
}

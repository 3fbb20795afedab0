use ndarray::{Array1, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{finite_diff_grad, relative_error, richardson_grad};
use crate::error::Result;
use crate::loss::smoothed_cross_entropy;
use crate::model::{NetworkSpec, SparseModel};
use crate::prune::{prune_backward_threshold, prune_backward_weights, prune_forward, BackwardSuperset};
use crate::scalar::sigmoid;

/// Settings for [`run_gradient_check`].
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub seed: u64,
    /// Tensor sizes cycled through by the random instances.
    pub sizes: Vec<usize>,
    pub instances: usize,
    pub alpha: f64,
    pub tolerance: f64,
    /// Negates the analytic threshold gradient. Test hook for checking that
    /// a wrong sign convention is caught.
    pub flip_threshold_sign: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sizes: vec![1, 7, 64, 300],
            instances: 1000,
            alpha: 0.5,
            tolerance: 1e-4,
            flip_threshold_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCoordinate {
    pub instance: usize,
    /// `w[i]`, `s`, or a model parameter path.
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub instances: usize,
    pub checked_coordinates: usize,
    pub worst: Option<WorstCoordinate>,
    /// Largest `|analytic - α·upstream|` over masked entries (exact rule).
    pub masked_max_deviation: f64,
    /// Largest masked-entry gradient magnitude; exactly 0 when α = 0.
    pub masked_max_abs: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst_relative_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.relative_error)
    }
}

const BOUNDARY_MARGIN: f64 = 1e-3;
const FD_STEP: f64 = 1e-6;
/// Denominator floor for relative errors of near-zero gradients.
const REL_FLOOR: f64 = 1e-3;

struct Tracker {
    worst: Option<WorstCoordinate>,
    checked: usize,
}

impl Tracker {
    fn observe(&mut self, instance: usize, coordinate: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric, REL_FLOOR);
        if self.worst.as_ref().is_none_or(|w| err > w.relative_error) {
            self.worst = Some(WorstCoordinate {
                instance,
                coordinate: coordinate(),
                analytic,
                numeric,
                relative_error: err,
            });
        }
    }
}

/// Compares the analytic pruning gradients against central differences on
/// random instances at 64-bit, then checks a small two-layer network end to
/// end. Test loss per instance: `Σ c·ŵ + ½ Σ ŵ²`.
pub fn run_gradient_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = Tracker {
        worst: None,
        checked: 0,
    };
    let mut masked_max_deviation = 0.0f64;
    let mut masked_max_abs = 0.0f64;
    let sizes = if cfg.sizes.is_empty() { vec![16] } else { cfg.sizes.clone() };

    for inst in 0..cfg.instances {
        let n = sizes[inst % sizes.len()].max(1);
        let s: f64 = rng.random_range(-4.0..0.0);
        let t = sigmoid(s);
        let w = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let c = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0f64));
        let loss = |w: &Array1<f64>, s: f64| -> f64 {
            let r = prune_forward(w, s).expect("finite input");
            r.sparse_weights
                .iter()
                .zip(c.iter())
                .map(|(&v, &ci)| ci * v + 0.5 * v * v)
                .sum()
        };
        let fwd = prune_forward(&w, s)?;
        let upstream = &c + &fwd.sparse_weights;
        let dw = prune_backward_weights(&upstream, &fwd, cfg.alpha, &BackwardSuperset::AllWeights, &w)?;
        // α = 0 isolates the active entries, which is what the loss can see.
        let mut ds = prune_backward_threshold(&upstream, &fwd, 0.0, s, &w)?;
        if cfg.flip_threshold_sign {
            ds = -ds;
        }

        for i in 0..n {
            if !fwd.active_mask[i] {
                let expected = cfg.alpha * upstream[i];
                masked_max_deviation = masked_max_deviation.max((dw[i] - expected).abs());
                masked_max_abs = masked_max_abs.max(dw[i].abs());
                continue;
            }
            if (w[i].abs() - t).abs() <= BOUNDARY_MARGIN {
                continue;
            }
            let numeric = finite_diff_grad(
                |x| {
                    let mut v = w.clone();
                    v[i] = x[0];
                    loss(&v, s)
                },
                &[w[i]],
                FD_STEP,
            )?[0];
            tracker.observe(inst, || format!("w[{i}]"), dw[i], numeric);
        }

        let near_boundary = w.iter().any(|v| (v.abs() - t).abs() <= BOUNDARY_MARGIN);
        if fwd.active_count > 0 && !near_boundary {
            let (numeric, _) = richardson_grad(|x| loss(&w, x[0]), &[s], 1e-4)?;
            tracker.observe(inst, || "s".to_string(), ds, numeric[0]);
        }
    }

    check_small_network(cfg, &mut rng, &mut tracker)?;

    let passed = tracker.worst.as_ref().is_none_or(|w| w.relative_error <= cfg.tolerance)
        && masked_max_deviation == 0.0
        && (cfg.alpha != 0.0 || masked_max_abs == 0.0);
    Ok(GradCheckReport {
        instances: cfg.instances,
        checked_coordinates: tracker.checked,
        worst: tracker.worst,
        masked_max_deviation,
        masked_max_abs,
        passed,
    })
}

fn check_small_network(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng, tracker: &mut Tracker) -> Result<()> {
    let spec = NetworkSpec::mlp(&[5, 6, 3]);
    let mut model = SparseModel::<f64>::new(&spec, cfg.seed)?;
    model.set_threshold_params(-2.5);
    let x = ArrayD::from_shape_fn(IxDyn(&[4, 5]), |_| rng.random_range(-1.0..1.0f64));
    let labels = vec![0usize, 2, 1, 2];
    let smoothing = 0.1;

    let (logits, cache) = model.forward(&x)?;
    let (_, dlogits) = smoothed_cross_entropy(&logits, &labels, smoothing)?;
    let grads = model.backward(&cache, &dlogits, 0.0, &BackwardSuperset::AllWeights)?;

    let eval = |m: &SparseModel<f64>| -> f64 {
        let out = m.predict(&x).expect("shapes fixed");
        smoothed_cross_entropy(&out, &labels, smoothing).expect("labels valid").0
    };

    for li in 0..model.layers.len() {
        let Some(p) = model.layers[li].prunable() else { continue };
        let g = grads.layers[li].as_ref().expect("prunable layer has gradients");
        let t = sigmoid(p.s);
        let fwd = p.last_forward.as_ref().expect("forward cached");
        let mut active_near_boundary = false;
        for (flat, (&w, &active)) in p.weights.iter().zip(fwd.active_mask.iter()).enumerate() {
            let near = (w.abs() - t).abs() <= BOUNDARY_MARGIN;
            active_near_boundary |= near;
            if !active || near {
                continue;
            }
            let numeric = finite_diff_grad(
                |v| {
                    let mut m = model.clone();
                    let pm = m.layers[li].prunable_mut().unwrap();
                    *pm.weights.iter_mut().nth(flat).unwrap() = v[0];
                    eval(&m)
                },
                &[w],
                FD_STEP,
            )?[0];
            let analytic = *g.weights.iter().nth(flat).unwrap();
            tracker.observe(usize::MAX, || format!("layer{li}.w[{flat}]"), analytic, numeric);
        }
        for (j, &b) in p.bias.iter().enumerate() {
            let numeric = finite_diff_grad(
                |v| {
                    let mut m = model.clone();
                    m.layers[li].prunable_mut().unwrap().bias[j] = v[0];
                    eval(&m)
                },
                &[b],
                FD_STEP,
            )?[0];
            tracker.observe(usize::MAX, || format!("layer{li}.b[{j}]"), g.bias[j], numeric);
        }
        if !active_near_boundary {
            let mut ds = g.s.expect("pruned layer has s gradient");
            if cfg.flip_threshold_sign {
                ds = -ds;
            }
            let (numeric, _) = richardson_grad(
                |v| {
                    let mut m = model.clone();
                    m.layers[li].prunable_mut().unwrap().s = v[0];
                    eval(&m)
                },
                &[p.s],
                1e-4,
            )?;
            tracker.observe(usize::MAX, || format!("layer{li}.s"), ds, numeric[0]);
        }
    }
    Ok(())
}

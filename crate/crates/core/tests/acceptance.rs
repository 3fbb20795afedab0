//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported as FAIL without failing the
//! target; see the README for why. Any other failure exits nonzero.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use autosparse::flops::{train_sample_flops, FlopsLedger};
use autosparse::metrics::csv_row;
use autosparse::model::{LayerSpec, NetworkSpec, SparseModel};
use autosparse::oracle::{
    brute_force_train_macs, run_gradient_check, simulate_case, simulate_descent, ConvergenceBranch, GradCheckConfig,
};
use autosparse::prune::{prune_backward, prune_forward, topk_superset};
use autosparse::schedules::{
    cosine_decay, exponential_decay, sigmoid_cosine_decay, sigmoid_decay, AnnealKind, AnnealSchedule,
};
use autosparse::trainer::{train, AlphaController, AutoTuneConfig, DataSource, TrainConfig, TrainOutcome};
use autosparse::{BackwardSuperset, Model32};
use ndarray::{Array1, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that are reported but do not fail the target.
const KNOWN_RED: &[u32] = &[7];

/// Weight decay for the MNIST runs: the default 2^-15 scaled by the ratio of
/// optimizer steps per epoch on the large-scale setting (5005) to the subset
/// at batch 256 (32).
const MNIST_WEIGHT_DECAY: f64 = 3.0517578125e-5 * 5005.0 / 32.0;
const MNIST_EPOCHS: usize = 30;
const MNIST_BATCH: usize = 256;
const MNIST_SEED: u64 = 0;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn schedule_exactness() -> Verdict {
    let start = Instant::now();
    let t = 100;
    let mut worst = 0.0f64;
    worst = worst.max((cosine_decay(0, t).unwrap() - 1.0).abs());
    worst = worst.max(cosine_decay(t, t).unwrap().abs());
    worst = worst.max((sigmoid_decay(t / 2, t, -6.0, 6.0).unwrap() - 0.5).abs());
    worst = worst.max((exponential_decay(0.0, 0.7).unwrap() - 1.0).abs());
    let n = 511;
    let mut dominated = true;
    for i in 0..=n {
        let c = cosine_decay(i, n).unwrap();
        let s = sigmoid_decay(i, n, -6.0, 6.0).unwrap();
        let m = sigmoid_cosine_decay(i, n, -6.0, 6.0).unwrap();
        dominated &= m >= c && m >= s && (m == c || m == s);
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-12 && dominated && within(elapsed, 1.0),
        format!("max endpoint error {worst:.1e}, max-dominance on 512 points {dominated}, {elapsed:.2?}"),
    )
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let cfg = GradCheckConfig {
        instances: 1000,
        alpha: 0.5,
        tolerance: 1e-4,
        ..GradCheckConfig::default()
    };
    let report = run_gradient_check(&cfg).unwrap();
    let elapsed = start.elapsed();
    verdict(
        report.passed && report.instances >= 1000 && report.masked_max_deviation == 0.0 && within(elapsed, 30.0),
        format!(
            "{} instances, {} coordinates, worst relative error {:.2e}, masked deviation {:e}, {elapsed:.2?}",
            report.instances,
            report.checked_coordinates,
            report.worst_relative_error(),
            report.masked_max_deviation
        ),
    )
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Array1<f64>, Array1<f64>, f64) {
    let n = rng.random_range(1..300);
    let w = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let up = Array1::from_shape_fn(n, |_| rng.random_range(-2.0..2.0));
    let s = rng.random_range(-6.0..1.0);
    (w, up, s)
}

fn str_reduction() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let supersets = [
        BackwardSuperset::AllWeights,
        BackwardSuperset::TopKFraction { keep_fraction: 0.5 },
    ];
    let mut masked = 0usize;
    let mut nonzero = 0usize;
    for _ in 0..1000 {
        let (w, up, s) = random_instance(&mut rng);
        let fwd = prune_forward(&w, s).unwrap();
        for sup in &supersets {
            let (dw, _) = prune_backward(&up, &fwd, 0.0, sup, &w, s).unwrap();
            for (g, &active) in dw.iter().zip(&fwd.active_mask) {
                if !active {
                    masked += 1;
                    nonzero += usize::from(*g != 0.0);
                }
            }
        }
    }
    verdict(
        masked > 0 && nonzero == 0,
        format!("{masked} masked entries over 1000 instances, {nonzero} with nonzero gradient"),
    )
}

fn case_engine() -> Verdict {
    let start = Instant::now();
    let grid: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
    let mut ok = true;
    for alpha in [0.0, 0.25, 1.0] {
        let mut seen = HashSet::new();
        for &v in &grid {
            for &v_star in &grid {
                let case = simulate_case(v, v_star, alpha);
                seen.insert(case.branch);
                if case.branch == ConvergenceBranch::MaskedTargetPositive {
                    ok &= case.gradient.to_bits() == (alpha * (-v_star)).to_bits();
                }
            }
        }
        ok &= seen.len() == ConvergenceBranch::ALL.len();
    }
    // Steps needed to leave the masked region, infinite when it never happens.
    let alphas = [0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0];
    let mut monotone = true;
    for &v0 in grid.iter().filter(|&&v| v <= 0.0).step_by(7) {
        for &v_star in grid.iter().filter(|&&v| v > 0.0).step_by(7) {
            let delays: Vec<usize> = alphas
                .iter()
                .map(|&a| {
                    simulate_descent(v0, v_star, |_| a, 0.5, 10_000)
                        .unwrap()
                        .first_active_step()
                        .unwrap_or(usize::MAX)
                })
                .collect();
            monotone &= delays.windows(2).all(|d| d[1] <= d[0]);
            monotone &= delays[0] == usize::MAX && delays[alphas.len() - 1] < usize::MAX;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        ok && monotone && within(elapsed, 5.0),
        format!("five branches and exact branch-4 gradient {ok}, delay non-increasing in alpha {monotone}, {elapsed:.2?}"),
    )
}

fn random_stack(seed: u64) -> SparseModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = if rng.random_bool(0.5) {
        let depth = rng.random_range(1..4);
        let widths: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..24)).collect();
        let mut spec = NetworkSpec::mlp(&widths);
        for l in &mut spec.layers {
            if let LayerSpec::Affine { dense_exempt, .. } = l {
                *dense_exempt = rng.random_bool(0.2);
            }
        }
        spec
    } else {
        let c = rng.random_range(1..4);
        let oc = rng.random_range(1..5);
        let k = rng.random_range(1..4);
        let h = rng.random_range(k..10);
        let stride = rng.random_range(1..3);
        let padding = rng.random_range(0..2);
        let oh = (h + 2 * padding - k) / stride + 1;
        NetworkSpec {
            input_shape: vec![c, h, h],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: oc,
                    kernel: k,
                    stride,
                    padding,
                    dense_exempt: rng.random_bool(0.2),
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Affine {
                    inputs: oc * oh * oh,
                    outputs: rng.random_range(1..6),
                    dense_exempt: rng.random_bool(0.2),
                },
            ],
            s_init: -5.0,
        }
    };
    let mut model = SparseModel::<f64>::new(&spec, seed).unwrap();
    for l in &mut model.layers {
        if let Some(p) = l.prunable_mut() {
            p.s = rng.random_range(-6.0..1.0);
        }
    }
    model
}

fn flops_ledger() -> Verdict {
    let start = Instant::now();
    // 3·Σf_S, 2·Σf_S + Σf_D, 2·Σf_S + Σf_B, and 2·Σf_S + Σmax(f_B, f_S) with
    // a keep fraction small enough for f_S to win the max.
    let modes = [
        (BackwardSuperset::AllWeights, true),
        (BackwardSuperset::AllWeights, false),
        (BackwardSuperset::TopKFraction { keep_fraction: 0.6 }, false),
        (BackwardSuperset::TopKFraction { keep_fraction: 0.05 }, true),
    ];
    let mut mismatches = 0;
    for seed in 0..50 {
        let model = random_stack(1000 + seed);
        for (sup, alpha_zero) in &modes {
            let ledger = FlopsLedger::from_model(&model, sup);
            let formula = train_sample_flops(&ledger, *alpha_zero, sup).unwrap();
            let brute = brute_force_train_macs(&model, *alpha_zero, sup);
            mismatches += usize::from(formula != brute);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        mismatches == 0 && within(elapsed, 10.0),
        format!("{mismatches} mismatches over 50 stacks x 4 modes, {elapsed:.2?}"),
    )
}

fn scd(i: usize, n: usize) -> f64 {
    let x = i as f64 / n as f64;
    let cosine = 0.5 * (1.0 + (PI * x).cos());
    let sigmoid = 1.0 - 1.0 / (1.0 + (-(-6.0 + 12.0 * x)).exp());
    cosine.max(sigmoid)
}

fn autotune_state_machine() -> Verdict {
    let total = 20;
    let reference = vec![2.0, 1.8, 1.6, 1.5, 1.4, 1.3, 1.25, 1.2, 1.15];
    let losses = [2.1, 1.81, 1.7, 1.5, 1.5, 1.3, 1.3, 1.2, 1.2];
    let mut at = AutoTuneConfig::new(9, reference);
    at.reset_epoch = Some(18);
    let blobs = DataSource::Blobs {
        num_classes: 2,
        dims: 2,
        per_class: 4,
        seed: 0,
        eval_per_class: 0,
    };
    let mut cfg = TrainConfig::new(NetworkSpec::mlp(&[2, 2]), blobs, total, 4, 0.5, 0);
    cfg.schedule = AnnealSchedule::new(AnnealKind::SigmoidCosine);
    cfg.zero_from = None;
    cfg.autotune = Some(at);

    let up: f64 = 1.0 + 0.05;
    let down: f64 = 1.0 - 0.005;
    // Loss vs 1.01 × reference: over, under, over, under, over, under, over,
    // under, over.
    let tuned_chain: [f64; 9] = [
        0.5,
        0.5 * up,
        0.5 * up * down,
        0.5 * up * down * up,
        0.5 * up * down * up * down,
        0.5 * up * down * up * down * up,
        0.5 * up * down * up * down * up * down,
        0.5 * up * down * up * down * up * down * up,
        0.5 * up * down * up * down * up * down * up * down,
    ];
    let tuned = 0.5 * up * down * up * down * up * down * up * down * up;

    let mut ctl = AlphaController::new(&cfg);
    let mut exact = true;
    let mut worst_handoff = 0.0f64;
    for epoch in 0..total {
        let alpha = ctl.alpha_for_epoch(epoch).unwrap();
        if epoch < 9 {
            exact &= alpha.to_bits() == tuned_chain[epoch].to_bits();
        } else if epoch <= 10 {
            exact &= alpha.to_bits() == tuned.to_bits();
        } else if epoch <= 18 {
            worst_handoff = worst_handoff.max((alpha - tuned * scd(epoch - 10, total - 9)).abs());
        } else {
            exact &= alpha == 0.0;
        }
        let loss = losses.get(epoch).copied().unwrap_or(1.0);
        ctl.end_epoch(epoch, loss).unwrap();
    }
    exact &= ctl.tuned().map(f64::to_bits) == Some(tuned.to_bits());
    verdict(
        exact && worst_handoff <= 1e-12,
        format!("tuned alpha {tuned:.6} reproduced bitwise {exact}, handoff max error {worst_handoff:.1e}"),
    )
}

fn mnist_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-subset")
}

fn mnist_config(epochs: usize, alpha0: f64, pruning: bool) -> TrainConfig {
    let mut spec = NetworkSpec::mlp(&[784, 256, 128, 10]);
    spec.s_init = -5.0;
    let data = DataSource::Idx {
        train_images: "train-images-idx3-ubyte.gz".into(),
        train_labels: "train-labels-idx1-ubyte.gz".into(),
        eval_images: Some("t10k-images-idx3-ubyte.gz".into()),
        eval_labels: Some("t10k-labels-idx1-ubyte.gz".into()),
        train_limit: None,
        eval_limit: None,
    };
    let mut cfg = TrainConfig::new(spec, data, epochs, MNIST_BATCH, alpha0, MNIST_SEED);
    cfg.schedule = AnnealSchedule::new(AnnealKind::SigmoidCosine);
    cfg.weight_decay = MNIST_WEIGHT_DECAY;
    cfg.zero_from = Some(epochs * 9 / 10);
    cfg.pruning = pruning;
    cfg
}

fn run_mnist(cfg: &TrainConfig) -> TrainOutcome<f32> {
    let (train_set, eval_set) = cfg.data.load::<f32>(&mnist_dir()).unwrap();
    let model = Model32::new(&cfg.network, cfg.seed).unwrap();
    train(model, &train_set, eval_set.as_ref(), cfg).unwrap()
}

fn runaway_sparsity() -> Verdict {
    let start = Instant::now();
    let mut cfg = mnist_config(5, 0.0, true);
    cfg.zero_from = None;
    let out = run_mnist(&cfg);
    let elapsed = start.elapsed();
    let trace: Vec<String> = out.records.iter().map(|r| format!("{:.3}", r.global_sparsity)).collect();
    let last = out.records.last().unwrap().global_sparsity;
    verdict(
        last >= 0.99 && within(elapsed, 300.0),
        format!("global sparsity by epoch [{}], needs >= 0.99, {elapsed:.2?}", trace.join(", ")),
    )
}

fn csv_body(out: &TrainOutcome<f32>) -> String {
    out.records.iter().map(csv_row).collect::<Vec<_>>().join("\n")
}

fn ga_stability() -> (Verdict, String) {
    let start = Instant::now();
    let ga = run_mnist(&mnist_config(MNIST_EPOCHS, 0.75, true));
    let dense = run_mnist(&mnist_config(MNIST_EPOCHS, 0.75, false));
    let elapsed = start.elapsed();
    let ga_last = ga.records.last().unwrap();
    let dense_acc = dense.records.last().unwrap().eval_accuracy.unwrap();
    let ga_acc = ga_last.eval_accuracy.unwrap();
    let sparsity = ga_last.global_sparsity;
    let gap_pp = 100.0 * (dense_acc - ga_acc).abs();
    let v = verdict(
        (0.5..=0.95).contains(&sparsity) && gap_pp <= 2.0 && within(elapsed, 900.0),
        format!(
            "sparsity {sparsity:.4} in [0.5, 0.95], accuracy {:.2}% vs dense {:.2}% (gap {gap_pp:.2} pp <= 2), {elapsed:.2?}",
            100.0 * ga_acc,
            100.0 * dense_acc
        ),
    );
    (v, csv_body(&ga))
}

fn determinism(first_body: &str) -> Verdict {
    let again = run_mnist(&mnist_config(MNIST_EPOCHS, 0.75, true));
    let body = csv_body(&again);
    verdict(
        body == first_body,
        format!("{} rows, bodies identical {}", MNIST_EPOCHS, body == first_body),
    )
}

fn topk_superset_property() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut violations = 0;
    for _ in 0..1000 {
        let rank = rng.random_range(1..4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..12)).collect();
        let n: usize = shape.iter().product();
        // Coarse values make magnitude ties common.
        let w = ArrayD::from_shape_fn(IxDyn(&shape), |_| (rng.random_range(-8i32..=8) as f64) / 8.0);
        let s = rng.random_range(-6.0..1.0);
        let fwd = prune_forward(&w, s).unwrap();
        let lo = fwd.active_fraction.max(1.0 / n as f64);
        let keep = lo + rng.random::<f64>() * (1.0 - lo);
        let superset: HashSet<usize> = topk_superset(&w, keep).unwrap().into_iter().collect();
        violations += fwd
            .active_mask
            .iter()
            .enumerate()
            .filter(|&(i, &a)| a && !superset.contains(&i))
            .count();
    }
    verdict(violations == 0, format!("{violations} active entries outside the superset over 1000 tensors"))
}

fn main() {
    let mut results: Vec<(u32, &str, Verdict)> = vec![
        (1, "schedule exactness", schedule_exactness()),
        (2, "gradient correctness", gradient_correctness()),
        (3, "alpha = 0 reduction", str_reduction()),
        (4, "convergence case engine", case_engine()),
        (5, "FLOPS ledger", flops_ledger()),
        (6, "AutoTune state machine", autotune_state_machine()),
        (7, "runaway sparsity", runaway_sparsity()),
    ];
    let (ga, body) = ga_stability();
    results.push((8, "GA stability", ga));
    results.push((9, "determinism", determinism(&body)));
    results.push((10, "TopK superset", topk_superset_property()));

    let mut unexpected = Vec::new();
    for (n, name, v) in &results {
        let status = if v.pass { "PASS" } else { "FAIL" };
        let note = match (v.pass, KNOWN_RED.contains(n)) {
            (false, true) => " [known red]",
            (true, true) => " [listed as known red but passing]",
            _ => "",
        };
        println!("criterion {n:>2} {status} {name}: {}{note}", v.detail);
        if !v.pass && !KNOWN_RED.contains(n) {
            unexpected.push(*n);
        }
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("{passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}

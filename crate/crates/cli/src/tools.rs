use std::fmt::Write as _;
use std::fs;
use std::process::ExitCode;

use anyhow::Result;
use autosparse::checkpoint::{write_atomic, Checkpoint};
use autosparse::flops::{train_sample_flops, FlopsLedger, LayerFlops};
use autosparse::oracle::{run_gradient_check, simulate_descent, GradCheckConfig};
use autosparse::{BackwardSuperset, Model64};
use serde::Serialize;

use crate::{exit, CheckGradArgs, FlopsArgs, SimulateArgs};

pub fn check_grad(args: &CheckGradArgs) -> Result<ExitCode> {
    let cfg = GradCheckConfig {
        seed: args.seed,
        sizes: args.sizes.clone(),
        instances: args.instances,
        alpha: args.alpha,
        tolerance: args.tolerance,
        flip_threshold_sign: args.flip_threshold_sign,
    };
    let report = run_gradient_check(&cfg)?;
    println!(
        "checked {} coordinates over {} instances",
        report.checked_coordinates, report.instances
    );
    println!("worst relative error {:.3e}", report.worst_relative_error());
    println!(
        "masked entries: max |grad - alpha*upstream| {:e}, max |grad| {:e}",
        report.masked_max_deviation, report.masked_max_abs
    );
    if report.passed {
        println!("PASS");
        return Ok(ExitCode::SUCCESS);
    }
    match &report.worst {
        Some(w) if w.relative_error > args.tolerance => eprintln!(
            "FAIL: instance {} coordinate {}: analytic {:e}, numeric {:e}, relative error {:e}",
            w.instance, w.coordinate, w.analytic, w.numeric, w.relative_error
        ),
        _ => eprintln!("FAIL: masked-entry gradients deviate from alpha*upstream"),
    }
    Ok(ExitCode::from(exit::CHECK_FAILED))
}

#[derive(Serialize)]
struct FlopsTotals {
    dense_infer: u64,
    sparse_infer: u64,
    dense_train: u64,
    sparse_train: u64,
}

#[derive(Serialize)]
struct FlopsReport {
    checkpoint_epoch: usize,
    alpha: f64,
    layers: Vec<LayerFlops>,
    totals: FlopsTotals,
    train_fraction: f64,
    infer_fraction: f64,
}

pub fn flops(args: &FlopsArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model: Model64 = ckpt.to_model()?;
    let superset = match args.keep_fraction {
        Some(keep_fraction) => BackwardSuperset::TopKFraction { keep_fraction },
        None => BackwardSuperset::AllWeights,
    };
    superset.validate()?;
    let ledger = FlopsLedger::from_model(&model, &superset);
    let sparse_train = train_sample_flops(&ledger, ckpt.alpha == 0.0, &superset)?;
    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let report = FlopsReport {
        checkpoint_epoch: ckpt.epoch,
        alpha: ckpt.alpha,
        train_fraction: ratio(sparse_train, ledger.dense_train()),
        infer_fraction: ratio(ledger.sparse_infer(), ledger.dense_infer()),
        totals: FlopsTotals {
            dense_infer: ledger.dense_infer(),
            sparse_infer: ledger.sparse_infer(),
            dense_train: ledger.dense_train(),
            sparse_train,
        },
        layers: ledger.layers,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

pub const TRAJECTORY_HEADER: &str = "v0,v_star,alpha,step,v";

/// Trajectories for every `(v0, v*, α)` in the grid, constant α per run.
pub fn trajectory_csv(args: &SimulateArgs) -> Result<String> {
    let mut csv = format!("{TRAJECTORY_HEADER}\n");
    for &v0 in &args.v0 {
        for &v_star in &args.v_star {
            for &alpha in &args.alpha {
                let traj = simulate_descent(v0, v_star, |_| alpha, args.lr, args.steps)?;
                for (step, v) in traj.values.iter().enumerate() {
                    writeln!(csv, "{v0},{v_star},{alpha},{step},{v}")?;
                }
            }
        }
    }
    Ok(csv)
}

pub fn simulate_ga(args: &SimulateArgs) -> Result<ExitCode> {
    let csv = trajectory_csv(args)?;
    match &args.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_atomic(path, csv.as_bytes())?
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use autosparse::checkpoint::{write_atomic, Checkpoint};
use autosparse::data::DatasetSummary;
use autosparse::metrics::MetricsWriter;
use autosparse::trainer::{train_with_observer, TrainConfig};
use autosparse::{Error, Scalar, SparseModel, SparsityReport};
use serde::Serialize;

use crate::{overrides, Dtype, TrainArgs};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize)]
struct Outputs {
    metrics_csv: PathBuf,
    metrics_jsonl: PathBuf,
    checkpoints: Vec<PathBuf>,
    ref_loss: Option<PathBuf>,
}

/// Everything needed to rerun and audit a training run.
#[derive(Serialize)]
struct RunManifest {
    version: u32,
    build: String,
    dtype: &'static str,
    status: &'static str,
    started_at: String,
    finished_at: String,
    config: TrainConfig,
    train_data: DatasetSummary,
    eval_data: Option<DatasetSummary>,
    outputs: Outputs,
    epochs_completed: usize,
    final_sparsity: Option<SparsityReport>,
    train_flops_fraction: Option<f64>,
    infer_flops_fraction: Option<f64>,
}

/// Reads the config file and applies `--seed`, `--set` and the ref-loss mode.
pub fn load_config(args: &TrainArgs) -> Result<TrainConfig> {
    let text = fs::read_to_string(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    let mut doc: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        doc["seed"] = seed.into();
    }
    for spec in &args.overrides {
        overrides::apply(&mut doc, spec)?;
    }
    let mut cfg: TrainConfig = serde_json::from_value(doc).map_err(Error::from).context("invalid config")?;
    if args.record_ref_loss {
        cfg.pruning = false;
        cfg.autotune = None;
    }
    if let Some(at) = cfg.autotune.as_mut() {
        if at.ref_loss.is_empty() {
            if let Some(p) = &at.ref_loss_path {
                let base = args.config.parent().unwrap_or(Path::new("."));
                let path = base.join(p);
                let bytes = fs::read(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                at.ref_loss = serde_json::from_slice(&bytes).map_err(Error::from)?;
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &TrainArgs) -> Result<ExitCode> {
    let cfg = load_config(args)?;
    match args.dtype {
        Dtype::F32 => run_typed::<f32>(args, cfg),
        Dtype::F64 => run_typed::<f64>(args, cfg),
    }
}

fn run_typed<T: Scalar>(args: &TrainArgs, cfg: TrainConfig) -> Result<ExitCode> {
    let started_at = chrono::Utc::now().to_rfc3339();
    let out = &args.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    write_atomic(&out.join("config.json"), &serde_json::to_vec_pretty(&cfg)?)?;

    let (train_data, eval_data) = cfg.data.load::<T>(&args.data_dir)?;
    let model = SparseModel::<T>::new(&cfg.network, cfg.seed)?;
    let mut metrics = MetricsWriter::create(out)?;
    let mut checkpoints = Vec::new();

    let result = train_with_observer(model, &train_data, eval_data.as_ref(), &cfg, |rec, model| {
        metrics.write(rec)?;
        let done = rec.epoch + 1;
        if cfg.checkpoint_every.is_some_and(|n| done % n == 0) {
            let path = out.join(format!("checkpoint-epoch-{done:04}.json"));
            Checkpoint::from_model(model, cfg.network.s_init, done, rec.alpha, cfg.seed).save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    });

    let mut manifest = RunManifest {
        version: MANIFEST_VERSION,
        build: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        dtype: T::DTYPE,
        status: "completed",
        started_at,
        finished_at: String::new(),
        config: cfg.clone(),
        train_data: train_data.summary(),
        eval_data: eval_data.as_ref().map(|d| d.summary()),
        outputs: Outputs {
            metrics_csv: out.join("metrics.csv"),
            metrics_jsonl: out.join("metrics.jsonl"),
            checkpoints: Vec::new(),
            ref_loss: None,
        },
        epochs_completed: 0,
        final_sparsity: None,
        train_flops_fraction: None,
        infer_flops_fraction: None,
    };

    let outcome = match result {
        Ok(o) => o,
        Err(err) => {
            if let Error::Diverged { last_record, .. } = &err {
                manifest.status = "diverged";
                manifest.epochs_completed = last_record.as_ref().map_or(0, |r| r.epoch + 1);
            } else {
                manifest.status = "failed";
            }
            manifest.outputs.checkpoints = checkpoints;
            manifest.finished_at = chrono::Utc::now().to_rfc3339();
            write_atomic(&out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
            return Err(err.into());
        }
    };

    let final_path = out.join("checkpoint.json");
    let last_alpha = outcome.records.last().map_or(cfg.alpha0, |r| r.alpha);
    Checkpoint::from_model(&outcome.model, cfg.network.s_init, outcome.records.len(), last_alpha, cfg.seed)
        .save(&final_path)?;
    checkpoints.push(final_path);

    if args.record_ref_loss {
        let losses: Vec<f64> = outcome.records.iter().map(|r| r.train_loss).collect();
        let path = out.join("ref_loss.json");
        write_atomic(&path, &serde_json::to_vec(&losses)?)?;
        manifest.outputs.ref_loss = Some(path);
    }

    let last = outcome.records.last();
    manifest.outputs.checkpoints = checkpoints;
    manifest.epochs_completed = outcome.records.len();
    manifest.final_sparsity = Some(outcome.model.sparsity_report());
    manifest.train_flops_fraction = last.map(|r| r.train_flops_fraction);
    manifest.infer_flops_fraction = last.map(|r| r.infer_flops_fraction);
    manifest.finished_at = chrono::Utc::now().to_rfc3339();
    write_atomic(&out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;

    if let Some(r) = last {
        println!(
            "epochs {}  loss {:.4}  accuracy {}  sparsity {:.4}  train F {:.4}  test F {:.4}",
            outcome.records.len(),
            r.train_loss,
            r.eval_accuracy.map_or("-".to_string(), |a| format!("{a:.4}")),
            r.global_sparsity,
            r.train_flops_fraction,
            r.infer_flops_fraction
        );
    }
    Ok(ExitCode::SUCCESS)
}

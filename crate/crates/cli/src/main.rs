mod overrides;
mod tools;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit statuses, distinct per failure class so scripts can branch on them.
pub mod exit {
    pub const RUNTIME: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DIVERGED: u8 = 3;
    pub const IO: u8 = 4;
    pub const CHECK_FAILED: u8 = 5;
}

#[derive(Parser)]
#[command(name = "autosparse", version, about = "Sparse training with gradient annealing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Compare analytic pruning gradients against finite differences.
    CheckGrad(CheckGradArgs),
    /// Print the per-layer FLOPS table of a checkpoint as JSON.
    Flops(FlopsArgs),
    /// Emit one-dimensional gradient-descent trajectories as CSV.
    SimulateGa(SimulateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Dtype {
    F32,
    F64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `dotted.key=value`; the value is parsed as JSON, falling back to a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Train dense (pruning and autotuning off) and write `ref_loss.json`.
    #[arg(long)]
    pub record_ref_loss: bool,
    #[arg(long, default_value = "runs/latest")]
    pub out_dir: PathBuf,
    /// Base directory for relative dataset paths.
    #[arg(long, env = "AUTOSPARSE_DATA_DIR", default_value = ".")]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value = "f32")]
    pub dtype: Dtype,
}

#[derive(Args)]
pub struct CheckGradArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 7, 64, 300])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub instances: usize,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, hide = true)]
    pub flip_threshold_sign: bool,
}

#[derive(Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Report the top-k backward superset budget with this keep fraction.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v0: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub v_star: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train::run(&a),
        Command::CheckGrad(a) => tools::check_grad(&a),
        Command::Flops(a) => tools::flops(&a),
        Command::SimulateGa(a) => tools::simulate_ga(&a),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use autosparse::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config { .. } | Error::InvalidArgument { .. } => exit::CONFIG,
                Error::Diverged { .. } => exit::DIVERGED,
                Error::Io { .. } | Error::Format { .. } | Error::Json(_) => exit::IO,
                Error::NonFinite(_) | Error::Contract(_) => exit::RUNTIME,
            };
        }
        if cause.is::<std::io::Error>() {
            return exit::IO;
        }
        if cause.is::<serde_json::Error>() || cause.is::<overrides::OverrideError>() {
            return exit::CONFIG;
        }
    }
    exit::RUNTIME
}

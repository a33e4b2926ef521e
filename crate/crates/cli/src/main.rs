//! `pcsc`: dataset generation, two-stage training, SNR sweeps, latency
//! benchmarks, the joint-training ablation and CSV reporting.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 when the data,
//! configuration or a checkpoint is rejected.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pcsc", version, about = "Point-cloud semantic communication over noisy channels")]
struct Cli {
    /// Seed for every source of randomness (dataset, init, training, noise).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate, import or inspect datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train one stage and write its checkpoint and per-epoch report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Time full test-split inference.
    Bench(BenchArgs),
    /// Train everything jointly from scratch under noise.
    Ablate(AblateArgs),
    /// Merge CSV outputs into one summary table.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    /// Write the synthetic shape dataset.
    Gen {
        #[arg(long, value_enum, default_value_t = DatasetPreset::Desk)]
        preset: DatasetPreset,
        /// Target directory (default: `<out_dir>/dataset`).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Import a `<root>/<class>/{train,test}/*.off` mesh tree.
    Import {
        root: PathBuf,
        #[arg(long, default_value_t = 1024)]
        points: usize,
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print a dataset summary.
    Inspect { dir: Option<PathBuf> },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DatasetPreset {
    /// Settings from the run config (desk defaults without one).
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    /// Starting checkpoint (default for stage 2: `<out_dir>/stage1.pcck`).
    #[arg(long)]
    from: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint (default: the latest stage in `<out_dir>`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Sweep the given SNRs in dB (default sweep when no values follow).
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    snr_sweep: Option<Vec<f64>>,
    /// Output CSV (default: `<out_dir>/sweep.csv`).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write zero latencies so repeated sweeps are byte-comparable.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Skip stage 1 and train every parameter jointly through the channel.
    #[arg(long, required = true)]
    no_pretrain: bool,
    /// Epoch budget (default: stage-1 plus stage-2 epochs).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// CSV files written by this tool.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// External baseline CSV with `method,snr_db,accuracy` columns.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

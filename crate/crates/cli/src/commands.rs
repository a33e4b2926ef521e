//! Subcommand implementations. Paths default to a run directory layout:
//! `dataset/`, `stage1.pcck`, `stage2.pcck`, their `*_report.csv`,
//! `sweep.csv`, `bench.csv` and the `ablation*` outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcsc_core::dataset::Dataset;
use pcsc_core::eval::{bench_latency, evaluate, snr_sweep, PreparedSplit};
use pcsc_core::model::{Checkpoint, Model, CHECKPOINT_MAGIC};
use pcsc_core::training::{joint_train, stage1_train, stage2_train, TrainConfig, TrainReport};
use pcsc_tensor::Scalar;

use crate::config::RunConfig;
use crate::{AblateArgs, BenchArgs, Cli, Command, DatasetCmd, EvalArgs, Precision, ReportArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.reseed(seed);
    }
    if let Some(dir) = cli.out_dir {
        cfg.output_dir = dir;
    }
    match cli.command {
        Command::Dataset(cmd) => dataset(&cfg, cmd),
        Command::Train(args) => train(&cfg, args),
        Command::Eval(args) => eval(&cfg, args),
        Command::Bench(args) => bench(&cfg, args),
        Command::Ablate(args) => ablate(&cfg, args),
        Command::Report(args) => report(args),
    }
}

/// A checkpoint of either precision.
enum AnyModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::F32($m) => $body,
            AnyModel::F64($m) => $body,
        }
    };
}

fn load_model(path: &Path) -> Result<AnyModel> {
    let bytes = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC {
        bail!("{} is not a checkpoint", path.display());
    }
    let ctx = || format!("loading {}", path.display());
    Ok(match bytes[8] as usize {
        4 => AnyModel::F32(Model::from_checkpoint(Checkpoint::from_bytes(&bytes).with_context(ctx)?)),
        8 => AnyModel::F64(Model::from_checkpoint(Checkpoint::from_bytes(&bytes).with_context(ctx)?)),
        w => bail!("{}: unsupported float width {w}", path.display()),
    })
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    Dataset::load(&dir).with_context(|| format!("loading dataset {} (run `pcsc dataset gen` first?)", dir.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn dataset(cfg: &RunConfig, cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Gen { preset: _, dir } => {
            let dir = dir.unwrap_or_else(|| cfg.output_dir.join("dataset"));
            let data = Dataset::synthetic(&cfg.dataset)?;
            data.write(&dir)?;
            println!(
                "wrote {} train / {} test clouds to {}",
                data.train.len(),
                data.test.len(),
                dir.display()
            );
        }
        DatasetCmd::Import { root, points, dir } => {
            let dir = dir.unwrap_or_else(|| cfg.output_dir.join("dataset"));
            let data = Dataset::from_off_tree(&root, points, cfg.dataset.seed)?;
            data.write(&dir)?;
            println!(
                "imported {} classes, {} train / {} test clouds into {}",
                data.num_classes(),
                data.train.len(),
                data.test.len(),
                dir.display()
            );
        }
        DatasetCmd::Inspect { dir } => {
            let dir = dir.unwrap_or_else(|| cfg.dataset_dir());
            let data = Dataset::load(&dir).with_context(|| format!("loading {}", dir.display()))?;
            let m = &data.manifest;
            println!("dataset {}", dir.display());
            println!("classes {}  points/cloud {}  seed {}", m.num_classes, m.points_per_cloud, m.seed);
            let train = Dataset::class_counts(&data.train, m.num_classes);
            let test = Dataset::class_counts(&data.test, m.num_classes);
            println!("{:<16} {:>6} {:>6}", "class", "train", "test");
            for (i, name) in m.class_names.iter().enumerate() {
                println!("{name:<16} {:>6} {:>6}", train[i], test[i]);
            }
            println!("{:<16} {:>6} {:>6}", "total", data.train.len(), data.test.len());
        }
    }
    Ok(())
}

fn finish_training<T: Scalar>(
    out: &Path,
    report_path: &Path,
    (ck, mut report): (Checkpoint<T>, TrainReport),
) -> Result<()> {
    create_parent(out)?;
    ck.save(out)?;
    report.checkpoint = Some(out.to_path_buf());
    write_text(report_path, &report.to_csv()?)?;
    println!("{}", report.summary());
    println!("checkpoint {}", out.display());
    Ok(())
}

fn train(cfg: &RunConfig, args: TrainArgs) -> Result<()> {
    let data = load_dataset(cfg)?;
    let mut tc: TrainConfig = if args.stage == 1 { cfg.stage1.clone() } else { cfg.stage2.clone() };
    if let Some(e) = args.epochs {
        tc.epochs = e;
    }
    let name = format!("stage{}", args.stage);
    let out = cfg.output_dir.join(format!("{name}.pcck"));
    let report = cfg.output_dir.join(format!("{name}_report.csv"));
    let from = match (args.stage, args.from) {
        (_, Some(p)) => Some(p),
        (2, None) => Some(cfg.output_dir.join("stage1.pcck")),
        _ => None,
    };
    let model = match from {
        Some(p) => load_model(&p)?,
        None => match args.precision {
            Precision::F32 => AnyModel::F32(Model::new(cfg.model.clone(), tc.seed)?),
            Precision::F64 => AnyModel::F64(Model::new(cfg.model.clone(), tc.seed)?),
        },
    };
    with_model!(model, m => {
        let result = if args.stage == 1 {
            stage1_train(&data, m, &tc)?
        } else {
            stage2_train(&data, m, &tc)?
        };
        finish_training(&out, &report, result)
    })
}

fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    let s2 = cfg.output_dir.join("stage2.pcck");
    if s2.exists() {
        s2
    } else {
        cfg.output_dir.join("stage1.pcck")
    }
}

fn eval(cfg: &RunConfig, args: EvalArgs) -> Result<()> {
    let data = load_dataset(cfg)?;
    let path = args.checkpoint.unwrap_or_else(|| default_checkpoint(cfg));
    let model = load_model(&path)?;
    let id = path.display().to_string();
    with_model!(model, m => {
        if m.config.num_classes != data.num_classes() {
            bail!("checkpoint has {} classes, dataset {}", m.config.num_classes, data.num_classes());
        }
        match args.snr_sweep {
            Some(list) => {
                let snrs = if list.is_empty() { cfg.eval.snrs.clone() } else { list };
                let split = PreparedSplit::new(&m.config, &data.test)?;
                let mut sweep = snr_sweep(&m, &split, &snrs, cfg.eval.seed, &id)?;
                if args.no_timing {
                    sweep.rows.iter_mut().for_each(|r| r.latency_s = 0.0);
                }
                let out = args.output.unwrap_or_else(|| cfg.output_dir.join("sweep.csv"));
                write_text(&out, &sweep.to_csv()?)?;
                for r in &sweep.rows {
                    println!("{:>6} dB  accuracy {:.4} ({}/{})", r.snr_db, r.accuracy, r.n_correct, r.n_total);
                }
                println!("sweep {}", out.display());
            }
            None => {
                let out = evaluate(&m, &data.test, &cfg.channel)?;
                println!(
                    "accuracy {:.4} ({}/{}) over {:?} at {} dB",
                    out.accuracy(),
                    out.n_correct,
                    out.n_total,
                    cfg.channel.kind,
                    cfg.channel.snr_db
                );
            }
        }
        Ok(())
    })
}

fn bench(cfg: &RunConfig, args: BenchArgs) -> Result<()> {
    let data = load_dataset(cfg)?;
    let path = args.checkpoint.unwrap_or_else(|| default_checkpoint(cfg));
    let reps = args.reps.unwrap_or(cfg.eval.bench_reps);
    if reps < 3 {
        bail!("bench needs at least 3 repetitions, got {reps}");
    }
    let report = with_model!(load_model(&path)?, m => bench_latency(&m, &data.test, reps)?);
    let out = args.output.unwrap_or_else(|| cfg.output_dir.join("bench.csv"));
    create_parent(&out)?;
    let file = fs::File::create(&out).with_context(|| format!("writing {}", out.display()))?;
    report.write_csv(file)?;
    println!(
        "{} clouds x {} runs: min {:.4}s median {:.4}s, {:.6}s per cloud",
        report.n_clouds,
        report.totals.len(),
        report.min(),
        report.median(),
        report.per_cloud_mean()
    );
    Ok(())
}

fn ablate(cfg: &RunConfig, args: AblateArgs) -> Result<()> {
    debug_assert!(args.no_pretrain);
    let data = load_dataset(cfg)?;
    // Everything trains from scratch, so the stage-1 optimizer settings
    // apply; the budget is both stages together.
    let tc = TrainConfig {
        stage: 2,
        epochs: args.epochs.unwrap_or(cfg.stage1.epochs + cfg.stage2.epochs),
        probe_snrs: cfg.stage2.probe_snrs.clone(),
        ..cfg.stage1.clone()
    };
    let out = cfg.output_dir.join("ablation.pcck");
    let report = cfg.output_dir.join("ablation_report.csv");
    let sweep_path = cfg.output_dir.join("ablation_sweep.csv");
    let model = match args.precision {
        Precision::F32 => AnyModel::F32(Model::new(cfg.model.clone(), tc.seed)?),
        Precision::F64 => AnyModel::F64(Model::new(cfg.model.clone(), tc.seed)?),
    };
    with_model!(model, m => {
        let (ck, rep) = joint_train(&data, m, &tc)?;
        let trained = Model::from_checkpoint(ck.clone());
        finish_training(&out, &report, (ck, rep))?;
        let split = PreparedSplit::new(&trained.config, &data.test)?;
        let sweep = snr_sweep(&trained, &split, &cfg.eval.snrs, cfg.eval.seed, &out.display().to_string())?;
        write_text(&sweep_path, &sweep.to_csv()?)?;
        println!("mean sweep accuracy {:.4}; sweep {}", sweep.mean_accuracy(), sweep_path.display());
        Ok(())
    })
}

fn report(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        rows.extend(
            crate::report::rows_from_csv(&path.display().to_string(), &text)
                .with_context(|| format!("in {}", path.display()))?,
        );
    }
    if let Some(path) = &args.baseline {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        rows.extend(crate::report::baseline_rows(&text).with_context(|| format!("in {}", path.display()))?);
    }
    let text = crate::report::to_csv(&rows)?;
    match &args.output {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

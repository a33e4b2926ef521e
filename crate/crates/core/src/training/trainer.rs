//! Two-stage training loop and the joint-from-scratch ablation.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pcsc_tensor::{Graph, Scalar, Var};

use super::optimizer::{clip_global_norm, AdamW};
use super::schedule::Sgdr;
use crate::channel::{sample_training_snr, ChannelSpec};
use crate::dataset::{augment, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_prepared, route_for, sweep_seed, PreparedSplit};
use crate::geometry::{group_cloud, GroupedBatch, StartPolicy};
use crate::model::{forward, Checkpoint, InputBatch, Model, Route, RngSnapshot, Session, StageTag};
use crate::rng::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrPolicy {
    /// One uniform [0, 20] dB draw per epoch.
    PerEpoch,
    /// A fresh draw for every batch.
    PerBatch,
    /// Always `fixed_snr_db` (`inf` for the noiseless channel).
    Fixed,
}

/// Which parameters stage 2 keeps fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Transformer blocks, positional embedding MLP and CLS embeddings.
    Transformer,
    /// The above plus the sub-cloud convolutional trunk.
    TransformerAndTrunk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: u8,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub sgdr: Sgdr,
    pub mse_weight: f64,
    pub snr_policy: SnrPolicy,
    pub fixed_snr_db: f64,
    pub freeze: FreezePolicy,
    pub augment: bool,
    pub grad_clip: f64,
    /// Evaluate on the test split every this many epochs (0: final only).
    pub eval_every: usize,
    /// Probe SNRs for those evaluations; `inf` is the noiseless channel.
    pub probe_snrs: Vec<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            epochs: 60,
            batch_size: 32,
            base_lr: 5e-4,
            weight_decay: 0.05,
            sgdr: Sgdr::default(),
            mse_weight: 1.0,
            snr_policy: SnrPolicy::PerEpoch,
            fixed_snr_db: f64::INFINITY,
            freeze: FreezePolicy::Transformer,
            augment: true,
            grad_clip: 5.0,
            eval_every: 10,
            probe_snrs: vec![f64::INFINITY],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self::default()
    }

    pub fn stage2() -> Self {
        TrainConfig {
            stage: 2,
            epochs: 40,
            // The codec starts from scratch behind a trained encoder: a larger
            // step and a single cosine cycle over the stage converge reliably.
            base_lr: 2e-3,
            sgdr: Sgdr { period: 40, ..Sgdr::default() },
            probe_snrs: vec![4.0, 20.0],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.stage, 1 | 2) {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.mse_weight >= 0.0) {
            return Err(Error::Config("mse_weight must be non-negative".into()));
        }
        if !(self.base_lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::Config("learning rate must be positive, weight decay >= 0".into()));
        }
        if self.fixed_snr_db.is_nan() || self.probe_snrs.iter().any(|s| s.is_nan()) {
            return Err(Error::Config("SNR values must not be NaN".into()));
        }
        self.sgdr.validate()
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.sgdr.lr(self.base_lr, epoch)
    }
}

/// One epoch of training.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Training SNR of the epoch; `None` without a channel or per-batch draws.
    pub snr_db: Option<f64>,
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
    pub train_accuracy: f64,
    /// Test accuracy per probe SNR, when evaluated this epoch.
    pub probes: Option<Vec<f64>>,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub stage: StageTag,
    pub mse_weight: f64,
    pub probe_snrs: Vec<f64>,
    pub records: Vec<EpochRecord>,
    pub checkpoint: Option<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Latest evaluated accuracy at each probe SNR.
    pub fn final_probes(&self) -> Option<&[f64]> {
        self.records.iter().rev().find_map(|r| r.probes.as_deref())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = [
            "stage", "epoch", "lr", "snr_db", "loss", "ce", "mse", "train_accuracy",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.probe_snrs.iter().map(|s| format!("acc@{s}")));
        header.push("wall_s".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                self.stage.name().to_string(),
                r.epoch.to_string(),
                r.lr.to_string(),
                fmt_opt(r.snr_db),
                r.loss.to_string(),
                r.ce.to_string(),
                r.mse.to_string(),
                r.train_accuracy.to_string(),
            ];
            for i in 0..self.probe_snrs.len() {
                row.push(fmt_opt(r.probes.as_ref().map(|p| p[i])));
            }
            row.push(r.wall_s.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers().map_err(csv_err)?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let fixed = ["stage", "epoch", "lr", "snr_db", "loss", "ce", "mse", "train_accuracy"];
        if cols.len() < fixed.len() + 1 || cols[..fixed.len()] != fixed || cols.last() != Some(&"wall_s") {
            return Err(Error::Format(format!("unexpected training report header {cols:?}")));
        }
        let probe_snrs = cols[fixed.len()..cols.len() - 1]
            .iter()
            .map(|c| {
                c.strip_prefix("acc@")
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("bad probe column {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                num(s).map(Some)
            }
        };
        let mut stage = StageTag::Init;
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(csv_err)?;
            stage = match &row[0] {
                "init" => StageTag::Init,
                "stage1" => StageTag::Stage1,
                "stage2" => StageTag::Stage2,
                "joint" => StageTag::Joint,
                other => return Err(Error::Format(format!("unknown stage {other:?}"))),
            };
            let probe_cells: Vec<Option<f64>> = (0..probe_snrs.len())
                .map(|i| opt(&row[fixed.len() + i]))
                .collect::<Result<_>>()?;
            let probes = if probe_cells.iter().all(Option::is_some) && !probe_cells.is_empty() {
                Some(probe_cells.into_iter().flatten().collect())
            } else {
                None
            };
            records.push(EpochRecord {
                epoch: row[1]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad epoch {:?}", &row[1])))?,
                lr: num(&row[2])?,
                snr_db: opt(&row[3])?,
                loss: num(&row[4])?,
                ce: num(&row[5])?,
                mse: num(&row[6])?,
                train_accuracy: num(&row[7])?,
                probes,
                wall_s: num(&row[row.len() - 1])?,
            });
        }
        if records.iter().enumerate().any(|(i, r)| r.epoch != i) {
            return Err(Error::Format("epochs must be recorded contiguously from 0".into()));
        }
        Ok(TrainReport {
            stage,
            mse_weight: f64::NAN,
            probe_snrs,
            records,
            checkpoint: None,
        })
    }

    pub fn summary(&self) -> String {
        let Some(last) = self.final_record() else {
            return format!("{}: no epochs", self.stage.name());
        };
        let mut s = format!(
            "{}: {} epochs, final loss {:.4} (ce {:.4}, mse {:.4}), train accuracy {:.3}",
            self.stage.name(),
            self.records.len(),
            last.loss,
            last.ce,
            last.mse,
            last.train_accuracy
        );
        if let Some(p) = self.final_probes() {
            for (snr, acc) in self.probe_snrs.iter().zip(p) {
                s.push_str(&format!(", test@{snr} {acc:.3}"));
            }
        }
        s
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Parameter names stage 2 keeps fixed under `policy`.
pub fn is_frozen_in_stage2(name: &str, policy: FreezePolicy) -> bool {
    let base = name.starts_with("blocks.") || name.starts_with("pos.") || name.starts_with("cls.");
    base || (policy == FreezePolicy::TransformerAndTrunk && name.starts_with("enc."))
}

pub fn is_channel_codec(name: &str) -> bool {
    name.starts_with("chenc.") || name.starts_with("chdec.")
}

struct Plan {
    tag: StageTag,
    trainable: Box<dyn Fn(&str) -> bool + Sync>,
    through_channel: bool,
    with_mse: bool,
}

fn check_classes<T: Scalar>(data: &Dataset, model: &Model<T>) -> Result<()> {
    if data.num_classes() != model.config.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes(),
            model.config.num_classes
        )));
    }
    Ok(())
}

/// Stage 1: everything except the channel codec, cross-entropy only, latent
/// tokens fed straight to the semantic decoder.
pub fn stage1_train<T: Scalar>(
    data: &Dataset,
    model: Model<T>,
    config: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    if !matches!(model.stage, StageTag::Init | StageTag::Stage1) {
        return Err(Error::Config(format!(
            "stage 1 starts from a fresh or stage-1 model, got {}",
            model.stage.name()
        )));
    }
    let plan = Plan {
        tag: StageTag::Stage1,
        trainable: Box::new(|n: &str| !is_channel_codec(n)),
        through_channel: false,
        with_mse: false,
    };
    run(data, model, config, plan)
}

/// Stage 2: the full system through the channel with randomized SNR, loss
/// `CE + lambda * MSE(L, L_hat)`, transformer side frozen.
pub fn stage2_train<T: Scalar>(
    data: &Dataset,
    model: Model<T>,
    config: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    if !matches!(model.stage, StageTag::Stage1 | StageTag::Stage2) {
        return Err(Error::Config(format!(
            "stage 2 needs a stage-1 model, got {}",
            model.stage.name()
        )));
    }
    let policy = config.freeze;
    let plan = Plan {
        tag: StageTag::Stage2,
        trainable: Box::new(move |n: &str| !is_frozen_in_stage2(n, policy)),
        through_channel: true,
        with_mse: true,
    };
    run(data, model, config, plan)
}

/// Ablation: every parameter trained jointly from initialization, through
/// the channel, with the stage-2 loss.
pub fn joint_train<T: Scalar>(
    data: &Dataset,
    model: Model<T>,
    config: &TrainConfig,
) -> Result<(Checkpoint<T>, TrainReport)> {
    if model.stage != StageTag::Init {
        return Err(Error::Config("joint training starts from a fresh model".into()));
    }
    let plan = Plan {
        tag: StageTag::Joint,
        trainable: Box::new(|_: &str| true),
        through_channel: true,
        with_mse: true,
    };
    run(data, model, config, plan)
}

fn snr_for_epoch(config: &TrainConfig, rng: &mut ChaCha8Rng) -> Option<f64> {
    match config.snr_policy {
        SnrPolicy::PerEpoch => Some(sample_training_snr(rng)),
        SnrPolicy::Fixed => Some(config.fixed_snr_db),
        SnrPolicy::PerBatch => None,
    }
}

fn group_training_batch<T: Scalar>(
    data: &Dataset,
    model: &Model<T>,
    config: &TrainConfig,
    tag: u64,
    epoch: usize,
    idx: &[usize],
) -> Result<Vec<GroupedBatch>> {
    let c = &model.config;
    idx.par_iter()
        .map(|&i| {
            let seed = derive_seed(config.seed, &[tag, epoch as u64, i as u64]);
            let cloud = &data.train[i];
            let cloud = if config.augment {
                augment(cloud, &mut rng_for(seed, &[0xa06]))?
            } else {
                cloud.clone()
            };
            group_cloud(&cloud, c.n_keys, c.group_size, StartPolicy::Random, seed, c.center_groups)
        })
        .collect()
}

struct StepLoss {
    total: f64,
    ce: f64,
    mse: f64,
    correct: usize,
}

fn run<T: Scalar>(
    data: &Dataset,
    mut model: Model<T>,
    config: &TrainConfig,
    plan: Plan,
) -> Result<(Checkpoint<T>, TrainReport)> {
    config.validate()?;
    model.config.validate()?;
    check_classes(data, &model)?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let labels: Vec<usize> = data
        .train
        .iter()
        .map(|c| {
            c.label
                .filter(|&l| l < model.config.num_classes)
                .ok_or_else(|| Error::Config("training sample without a valid label".into()))
        })
        .collect::<Result<_>>()?;
    let tag = plan.tag as u64 + 1;
    let mut rng = rng_for(config.seed, &[0x7a1, tag]);
    let mut opt = AdamW::<T>::default();
    let test = PreparedSplit::new(&model.config, &data.test)?;
    let mut records = Vec::with_capacity(config.epochs);
    model.stage = plan.tag;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr(epoch);
        let epoch_snr = if plan.through_channel {
            snr_for_epoch(config, &mut rng)
        } else {
            None
        };
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut ce, mut mse, mut correct, mut batches) = (0.0, 0.0, 0.0, 0, 0);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let snr = match (plan.through_channel, epoch_snr) {
                (false, _) => None,
                (true, Some(s)) => Some(s),
                (true, None) => Some(sample_training_snr(&mut rng)),
            };
            let grouped = group_training_batch(data, &model, config, tag, epoch, idx)?;
            let refs: Vec<&GroupedBatch> = grouped.iter().collect();
            let streams = idx
                .iter()
                .map(|&i| ((epoch as u64) << 32) | i as u64)
                .collect();
            let input = InputBatch::<T>::from_groups(
                &model.config,
                &refs,
                idx.iter().map(|&i| labels[i]).collect(),
                streams,
            )?;
            let noise_seed = derive_seed(config.seed, &[tag, 0x401, epoch as u64, bi as u64]);
            let step = train_step(&mut model, &mut opt, &plan, config, &input, snr, noise_seed, lr)?;
            total += step.total;
            ce += step.ce;
            mse += step.mse;
            correct += step.correct;
            batches += 1;
        }
        let n = batches as f64;
        let last = epoch + 1 == config.epochs;
        let probes = if last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
            Some(
                config
                    .probe_snrs
                    .iter()
                    .map(|&snr| {
                        let spec = ChannelSpec::awgn(snr, sweep_seed(config.seed, snr));
                        evaluate_prepared(&model, &test, route_for(model.stage, &spec))
                            .map(|o| o.accuracy())
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        records.push(EpochRecord {
            epoch,
            lr,
            snr_db: epoch_snr,
            loss: total / n,
            ce: ce / n,
            mse: mse / n,
            train_accuracy: correct as f64 / data.train.len() as f64,
            probes,
            wall_s: start.elapsed().as_secs_f64(),
        });
    }

    let report = TrainReport {
        stage: plan.tag,
        mse_weight: config.mse_weight,
        probe_snrs: config.probe_snrs.clone(),
        records,
        checkpoint: None,
    };
    Ok((model.checkpoint(RngSnapshot::capture(&rng)), report))
}

#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    plan: &Plan,
    config: &TrainConfig,
    input: &InputBatch<T>,
    snr: Option<f64>,
    noise_seed: u64,
    lr: f64,
) -> Result<StepLoss> {
    let g = Graph::<T>::training();
    let spec = snr.map(|s| ChannelSpec::awgn(s, noise_seed));
    let (mut grads, bn_stats, step) = {
        let s = Session::new(&g, &model.config, &model.params, &*plan.trainable, noise_seed);
        let route = match &spec {
            Some(spec) => Route::Channel(spec),
            None => Route::Direct,
        };
        let out = forward(&s, input, route)?;
        let ce = g.cross_entropy(out.logits, &input.labels)?;
        let (loss, mse) = match (plan.with_mse, out.recovered) {
            (true, Some(rec)) => {
                let mse = g.mse(out.latent.tokens, rec.tokens)?;
                let weighted = g.scale(mse, T::from_f64(config.mse_weight))?;
                (g.add(ce, weighted)?, Some(mse))
            }
            _ => (ce, None),
        };
        let correct = count_correct(&g, out.logits, &input.labels, model.config.num_classes);
        let mut all = g.backward(loss)?;
        let grads = s.gradients(&mut all);
        let step = StepLoss {
            total: g.scalar(loss).to_f64(),
            ce: g.scalar(ce).to_f64(),
            mse: mse.map_or(0.0, |m| g.scalar(m).to_f64()),
            correct,
        };
        (grads, s.take_bn_stats(), step)
    };
    clip_global_norm(&mut grads, config.grad_clip);
    opt.step(&mut model.params.params, &grads, lr, config.weight_decay)?;
    model.update_running_stats(&bn_stats)?;
    Ok(step)
}

fn count_correct<T: Scalar>(g: &Graph<T>, logits: Var, labels: &[usize], classes: usize) -> usize {
    let v = g.value(logits);
    v.chunks(classes)
        .zip(labels)
        .filter(|(row, &l)| {
            let mut best = 0;
            for (i, x) in row.iter().enumerate() {
                if *x > row[best] {
                    best = i;
                }
            }
            best == l
        })
        .count()
}

//! Evaluation harness: accuracy under a channel, SNR sweeps, compression
//! ratio and latency benchmarks, with CSV emission.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pcsc_tensor::{Graph, Scalar};

use crate::channel::{ChannelKind, ChannelSpec};
use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{group_cloud, GroupedBatch, StartPolicy};
use crate::model::{forward, InputBatch, Model, ModelConfig, Route, Session, StageTag};
use crate::rng::derive_seed;

/// Default probe sweep, in dB.
pub const DEFAULT_SWEEP: [f64; 6] = [0.0, 4.0, 8.0, 12.0, 16.0, 20.0];

const EVAL_BATCH: usize = 64;

/// Test clouds grouped once with the deterministic evaluation start (index
/// 0), reusable across channel conditions.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub grouped: Vec<GroupedBatch>,
    pub labels: Vec<usize>,
}

impl PreparedSplit {
    pub fn new(config: &ModelConfig, clouds: &[PointCloud]) -> Result<Self> {
        let labels = clouds
            .iter()
            .enumerate()
            .map(|(i, c)| match c.label {
                Some(l) if l < config.num_classes => Ok(l),
                other => Err(Error::Config(format!(
                    "sample {i} has label {other:?}, model has {} classes",
                    config.num_classes
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let grouped = clouds
            .par_iter()
            .map(|c| {
                group_cloud(
                    c,
                    config.n_keys,
                    config.group_size,
                    StartPolicy::Fixed(0),
                    0,
                    config.center_groups,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSplit { grouped, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples.
    pub fn head(&self, n: usize) -> PreparedSplit {
        let n = n.min(self.len());
        PreparedSplit {
            grouped: self.grouped[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub n_correct: usize,
    pub n_total: usize,
    pub predictions: Vec<usize>,
    /// Wall time of inference, excluding grouping.
    pub seconds: f64,
}

impl EvalOutcome {
    pub fn accuracy(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_correct as f64 / self.n_total as f64
        }
    }
}

/// A model that never saw the channel is read out directly when the channel
/// is noiseless; everything else goes through the codec and channel.
pub fn route_for(stage: StageTag, spec: &ChannelSpec) -> Route<'_> {
    match stage {
        StageTag::Init | StageTag::Stage1 if spec.is_noiseless() => Route::Direct,
        _ => Route::Channel(spec),
    }
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Accuracy on a prepared split. Sample `i` draws channel noise from
/// stream `i`, so results do not depend on batching.
pub fn evaluate_prepared<T: Scalar>(
    model: &Model<T>,
    split: &PreparedSplit,
    route: Route<'_>,
) -> Result<EvalOutcome> {
    let cfg = &model.config;
    let start = Instant::now();
    let mut predictions = Vec::with_capacity(split.len());
    for lo in (0..split.len()).step_by(EVAL_BATCH) {
        let hi = (lo + EVAL_BATCH).min(split.len());
        let refs: Vec<&GroupedBatch> = split.grouped[lo..hi].iter().collect();
        let input = InputBatch::<T>::from_groups(
            cfg,
            &refs,
            split.labels[lo..hi].to_vec(),
            (lo as u64..hi as u64).collect(),
        )?;
        let g = Graph::<T>::new();
        let s = Session::frozen(&g, cfg, &model.params);
        let out = forward(&s, &input, route)?;
        let logits = g.value(out.logits);
        predictions.extend(logits.chunks(cfg.num_classes).map(argmax));
    }
    let seconds = start.elapsed().as_secs_f64();
    let n_correct = predictions
        .iter()
        .zip(&split.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(EvalOutcome {
        n_correct,
        n_total: split.len(),
        predictions,
        seconds,
    })
}

pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    clouds: &[PointCloud],
    spec: &ChannelSpec,
) -> Result<EvalOutcome> {
    let split = PreparedSplit::new(&model.config, clouds)?;
    evaluate_prepared(model, &split, route_for(model.stage, spec))
}

/// Noise seed used for one sweep point.
pub fn sweep_seed(seed: u64, snr_db: f64) -> u64 {
    derive_seed(seed, &[0x5eed, snr_db.to_bits()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub checkpoint: String,
    pub channel: ChannelKind,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn accuracy_at(&self, snr_db: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.snr_db == snr_db).map(|r| r.accuracy)
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.accuracy).sum::<f64>() / self.rows.len() as f64
    }

    /// Metadata as `#` comment lines, then one header and one row per SNR.
    pub fn to_csv(&self) -> Result<String> {
        let channel = match self.channel {
            ChannelKind::Awgn => "awgn",
            ChannelKind::FlatFading => "flat_fading",
        };
        let mut out = format!(
            "# checkpoint={}\n# channel={channel}\n# seed={}\n",
            self.checkpoint, self.seed
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["snr_db", "accuracy", "n_correct", "n_total", "latency_s"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.snr_db.to_string(),
                r.accuracy.to_string(),
                r.n_correct.to_string(),
                r.n_total.to_string(),
                r.latency_s.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        out.push_str(std::str::from_utf8(&body).expect("csv output is UTF-8"));
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut result = SweepResult {
            checkpoint: String::new(),
            channel: ChannelKind::Awgn,
            seed: 0,
            rows: Vec::new(),
        };
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let Some((k, v)) = line[1..].trim().split_once('=') else {
                continue;
            };
            match k {
                "checkpoint" => result.checkpoint = v.to_string(),
                "channel" => {
                    result.channel = match v {
                        "awgn" => ChannelKind::Awgn,
                        "flat_fading" => ChannelKind::FlatFading,
                        other => return Err(Error::Format(format!("unknown channel {other:?}"))),
                    }
                }
                "seed" => {
                    result.seed = v
                        .parse()
                        .map_err(|_| Error::Format(format!("bad seed {v:?}")))?
                }
                _ => {}
            }
        }
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>()
            != ["snr_db", "accuracy", "n_correct", "n_total", "latency_s"]
        {
            return Err(Error::Format(format!("unexpected sweep header {headers:?}")));
        }
        for row in rdr.deserialize() {
            let row: SweepRow = row.map_err(csv_err)?;
            let exact = if row.n_total == 0 {
                0.0
            } else {
                row.n_correct as f64 / row.n_total as f64
            };
            if row.accuracy != exact {
                return Err(Error::Format(format!(
                    "accuracy {} is not {}/{}",
                    row.accuracy, row.n_correct, row.n_total
                )));
            }
            result.rows.push(row);
        }
        check_increasing(&result.rows)?;
        Ok(result)
    }
}

fn check_increasing(rows: &[SweepRow]) -> Result<()> {
    if rows.windows(2).any(|w| !(w[0].snr_db < w[1].snr_db)) {
        return Err(Error::Format("sweep SNRs must be strictly increasing".into()));
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// One AWGN evaluation per SNR, rows ascending.
pub fn snr_sweep<T: Scalar>(
    model: &Model<T>,
    split: &PreparedSplit,
    snrs: &[f64],
    seed: u64,
    checkpoint: &str,
) -> Result<SweepResult> {
    let mut sorted = snrs.to_vec();
    if sorted.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("SNR list contains NaN".into()));
    }
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rows = sorted
        .iter()
        .map(|&snr| {
            let spec = ChannelSpec::awgn(snr, sweep_seed(seed, snr));
            let out = evaluate_prepared(model, split, route_for(model.stage, &spec))?;
            Ok(SweepRow {
                snr_db: snr,
                accuracy: out.accuracy(),
                n_correct: out.n_correct,
                n_total: out.n_total,
                latency_s: if out.n_total == 0 {
                    0.0
                } else {
                    out.seconds / out.n_total as f64
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        checkpoint: checkpoint.to_string(),
        channel: ChannelKind::Awgn,
        seed,
        rows,
    })
}

/// Transmitted real dimensions over input real dimensions.
pub fn compression_ratio(config: &ModelConfig) -> f64 {
    (config.tokens() * config.channel_dim) as f64 / (config.n_points * 3) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub n_clouds: usize,
    /// Wall time of each full-split pass.
    pub totals: Vec<f64>,
}

impl BenchReport {
    pub fn min(&self) -> f64 {
        self.totals.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn median(&self) -> f64 {
        let mut t = self.totals.clone();
        t.sort_by(f64::total_cmp);
        match t.len() {
            0 => 0.0,
            n if n % 2 == 1 => t[n / 2],
            n => 0.5 * (t[n / 2 - 1] + t[n / 2]),
        }
    }

    pub fn per_cloud_mean(&self) -> f64 {
        if self.n_clouds == 0 || self.totals.is_empty() {
            0.0
        } else {
            self.totals.iter().sum::<f64>() / self.totals.len() as f64 / self.n_clouds as f64
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_clouds", "repetitions", "min_s", "median_s", "per_cloud_mean_s"])
            .map_err(csv_err)?;
        w.write_record([
            self.n_clouds.to_string(),
            self.totals.len().to_string(),
            self.min().to_string(),
            self.median().to_string(),
            self.per_cloud_mean().to_string(),
        ])
        .map_err(csv_err)?;
        w.flush().map_err(|e| Error::Format(e.to_string()))
    }
}

/// Full-split inference timed `reps` times (at least 3), including
/// grouping but not dataset loading. Noiseless channel.
pub fn bench_latency<T: Scalar>(
    model: &Model<T>,
    clouds: &[PointCloud],
    reps: usize,
) -> Result<BenchReport> {
    let spec = ChannelSpec::noiseless();
    let route = route_for(model.stage, &spec);
    let mut totals = Vec::new();
    for _ in 0..reps.max(3) {
        let start = Instant::now();
        if !clouds.is_empty() {
            let split = PreparedSplit::new(&model.config, clouds)?;
            evaluate_prepared(model, &split, route)?;
        }
        totals.push(if clouds.is_empty() {
            0.0
        } else {
            start.elapsed().as_secs_f64()
        });
    }
    Ok(BenchReport {
        n_clouds: clouds.len(),
        totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compression_ratios() {
        assert!((compression_ratio(&ModelConfig::paper()) - 1560.0 / 3072.0).abs() < 1e-12);
        assert_eq!(compression_ratio(&ModelConfig::desk()), 264.0 / 768.0);
    }

    #[test]
    fn csv_rejects_inexact_accuracy() {
        let text = "snr_db,accuracy,n_correct,n_total,latency_s\n0,0.5,1,3,0\n";
        assert!(SweepResult::from_csv(text).is_err());
    }

    #[test]
    fn csv_rejects_unsorted_rows() {
        let text = "snr_db,accuracy,n_correct,n_total,latency_s\n4,0.5,1,2,0\n0,0.5,1,2,0\n";
        assert!(SweepResult::from_csv(text).is_err());
    }

    #[test]
    fn median_of_even_count() {
        let b = BenchReport {
            n_clouds: 2,
            totals: vec![3.0, 1.0, 2.0, 4.0],
        };
        assert_eq!(b.median(), 2.5);
        assert_eq!(b.min(), 1.0);
        assert_eq!(b.per_cloud_mean(), 1.25);
    }
}

//! The run configuration file: one TOML document with `[dataset]`,
//! `[model]`, `[train.stage1]`, `[train.stage2]`, `[channel]` and `[eval]`
//! sections. Every section is optional and overlays the desk defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pcsc_core::channel::ChannelSpec;
use pcsc_core::dataset::SyntheticConfig;
use pcsc_core::eval::DEFAULT_SWEEP;
use pcsc_core::model::{ModelConfig, Preset};
use pcsc_core::training::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::Table;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub snrs: Vec<f64>,
    /// Noise seed of the sweep; the global `--seed` overrides it.
    pub seed: u64,
    pub bench_reps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            snrs: DEFAULT_SWEEP.to_vec(),
            seed: 0,
            bench_reps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub dataset: SyntheticConfig,
    /// Existing dataset directory to use instead of `<output_dir>/dataset`.
    pub dataset_path: Option<PathBuf>,
    pub model: ModelConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub channel: ChannelSpec,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("pcsc-run"),
            dataset: SyntheticConfig::default(),
            dataset_path: None,
            model: ModelConfig::desk(),
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
            channel: ChannelSpec::noiseless(),
            eval: EvalSection::default(),
        }
    }
}

/// Deserializes `base` with the keys of `patch` written over it.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&toml::Value>, what: &str) -> Result<T> {
    let mut table = Table::try_from(base).with_context(|| format!("serializing default {what}"))?;
    if let Some(p) = patch {
        let Some(p) = p.as_table() else {
            bail!("[{what}] must be a table");
        };
        for (k, v) in p {
            table.insert(k.clone(), v.clone());
        }
    }
    table.try_into().with_context(|| format!("invalid [{what}] section"))
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut doc: Table = text.parse().context("run config is not valid TOML")?;
        let known = ["output_dir", "dataset", "model", "train", "channel", "eval"];
        if let Some(k) = doc.keys().find(|k| !known.contains(&k.as_str())) {
            bail!("unknown run config key {k:?}");
        }
        let mut cfg = RunConfig::default();
        if let Some(v) = doc.remove("output_dir") {
            let s = v.as_str().context("output_dir must be a string")?;
            cfg.output_dir = base_dir.join(s);
        }
        if let Some(mut ds) = doc.remove("dataset") {
            if let Some(t) = ds.as_table_mut() {
                if let Some(p) = t.remove("path") {
                    let p = p.as_str().context("dataset.path must be a string")?;
                    cfg.dataset_path = Some(base_dir.join(p));
                }
            }
            cfg.dataset = overlay(&cfg.dataset, Some(&ds), "dataset")?;
        }
        if let Some(mut m) = doc.remove("model") {
            let preset = match m.as_table_mut().and_then(|t| t.remove("preset")) {
                Some(p) => p.try_into::<Preset>().context("invalid model preset")?,
                None => Preset::Desk,
            };
            let mut base = ModelConfig::from_preset(preset);
            if m.as_table().is_some_and(|t| !t.is_empty()) {
                base.preset = Preset::Custom;
            }
            cfg.model = overlay(&base, Some(&m), "model")?;
        }
        if let Some(train) = doc.remove("train") {
            let t = train.as_table().context("[train] must be a table")?;
            if let Some(k) = t.keys().find(|k| !["stage1", "stage2"].contains(&k.as_str())) {
                bail!("unknown [train] key {k:?}; use [train.stage1] or [train.stage2]");
            }
            cfg.stage1 = overlay(&cfg.stage1, t.get("stage1"), "train.stage1")?;
            cfg.stage2 = overlay(&cfg.stage2, t.get("stage2"), "train.stage2")?;
        }
        if let Some(ch) = doc.remove("channel") {
            cfg.channel = overlay(&cfg.channel, Some(&ch), "channel")?;
        }
        if let Some(ev) = doc.remove("eval") {
            cfg.eval = overlay(&cfg.eval, Some(&ev), "eval")?;
        }
        cfg.stage1.stage = 1;
        cfg.stage2.stage = 2;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, dir).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        self.channel.validate()?;
        if let Some(p) = &self.dataset_path {
            if !p.is_dir() {
                bail!("dataset path {} does not exist", p.display());
            }
        }
        if self.model.num_classes != self.dataset.num_classes {
            bail!(
                "model has {} classes but the dataset section generates {}",
                self.model.num_classes,
                self.dataset.num_classes
            );
        }
        Ok(())
    }

    /// Applies the global `--seed` to every source of randomness.
    pub fn reseed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
        self.channel.seed = seed;
        self.eval.seed = seed;
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset_path
            .clone()
            .unwrap_or_else(|| self.output_dir.join("dataset"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_desk_defaults() {
        let c = RunConfig::from_toml("", Path::new(".")).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn sections_overlay_defaults() {
        let text = r#"
            output_dir = "out"
            [dataset]
            train_per_class = 2
            [model]
            preset = "desk"
            token_dim = 48
            [train.stage2]
            epochs = 3
            [channel]
            kind = "flat_fading"
            snr_db = 10.0
            h_re = 0.6
            h_im = 0.8
        "#;
        let c = RunConfig::from_toml(text, Path::new("/r")).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("/r/out"));
        assert_eq!(c.dataset.train_per_class, 2);
        assert_eq!(c.model.token_dim, 48);
        assert_eq!(c.model.preset, Preset::Custom);
        assert_eq!((c.stage2.stage, c.stage2.epochs), (2, 3));
        assert_eq!(c.stage2.probe_snrs, TrainConfig::stage2().probe_snrs);
        assert_eq!(c.channel.h_im, 0.8);
    }

    #[test]
    fn unknown_keys_and_mismatches_are_rejected() {
        assert!(RunConfig::from_toml("bogus = 1", Path::new(".")).is_err());
        assert!(RunConfig::from_toml("[model]\nwidth = 3", Path::new(".")).is_err());
        assert!(RunConfig::from_toml("[model]\nnum_classes = 5", Path::new(".")).is_err());
        assert!(RunConfig::from_toml("[train]\nepochs = 5", Path::new(".")).is_err());
    }
}

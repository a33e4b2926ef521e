//! The network: positional embedding, sub-cloud encoder, transformer stack,
//! channel codec and classification head, plus checkpoints.

mod checkpoint;
mod config;
mod network;
mod params;

pub use checkpoint::{Checkpoint, RngSnapshot, StageTag, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Fusion, ModelConfig, Preset};
pub use network::{
    channel_decode, channel_encode, encode_subclouds, forward, positional_embed,
    semantic_decode, semantic_encode, ForwardOutput, InputBatch, Route, Session,
    TokenEmbeddings,
};
pub use params::{buffer_specs, count_parameters, param_specs, Init, ParamSpec, ParamStore};

use pcsc_tensor::{BatchStats, Scalar};

use crate::error::{Error, Result};

/// A configuration with its parameters and the stage that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub stage: StageTag,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(&config, seed)?;
        Ok(Model {
            config,
            params,
            stage: StageTag::Init,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Self {
        Model {
            config: ck.config,
            params: ck.params,
            stage: ck.stage,
        }
    }

    pub fn checkpoint(&self, rng: RngSnapshot) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            stage: self.stage,
            params: self.params.clone(),
            rng,
        }
    }

    /// Folds training-mode batch statistics into the running estimates:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<T>)]) -> Result<()> {
        let m = T::from_f64(self.config.bn_momentum);
        let keep = T::one() - m;
        for (prefix, s) in stats {
            for (suffix, values) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let name = format!("{prefix}.{suffix}");
                let buf = self
                    .params
                    .buffers
                    .get_mut(&name)
                    .ok_or_else(|| Error::Config(format!("missing buffer {name}")))?;
                if buf.len() != values.len() {
                    return Err(Error::Config(format!("{name}: statistics width mismatch")));
                }
                for (r, &v) in buf.data_mut().iter_mut().zip(values) {
                    *r = keep * *r + m * v;
                }
            }
        }
        Ok(())
    }
}

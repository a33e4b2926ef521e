//! Two-stage training: AdamW, the SGDR schedule, and the stage loops.

mod optimizer;
mod schedule;
mod trainer;

pub use optimizer::{clip_global_norm, AdamW};
pub use schedule::Sgdr;
pub use trainer::{
    is_channel_codec, is_frozen_in_stage2, joint_train, stage1_train, stage2_train, EpochRecord,
    FreezePolicy, SnrPolicy, TrainConfig, TrainReport,
};

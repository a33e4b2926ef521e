use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
    Custom,
}

/// How positional embeddings P and sub-cloud features S form token inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// `P + S`.
    Sum,
    /// `W [P; S] + b`, a learned `2D -> D` projection.
    ConcatProject,
}

/// Network dimensions. `conv_widths` are the four pointwise convolution
/// outputs of the sub-cloud encoder; the third one reads the pooled feature
/// concatenated onto each point, so its input width is `2 * conv_widths[1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub n_points: usize,
    pub n_keys: usize,
    pub group_size: usize,
    pub token_dim: usize,
    pub transformer_blocks: usize,
    pub heads: usize,
    pub channel_dim: usize,
    pub num_classes: usize,
    pub pos_hidden: usize,
    pub conv_widths: [usize; 4],
    pub codec_hidden: usize,
    pub mlp_ratio: usize,
    pub fusion: Fusion,
    pub center_groups: bool,
    /// Reject un-centered groups instead of encoding raw coordinates.
    pub strict_centering: bool,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            preset: Preset::Paper,
            n_points: 1024,
            n_keys: 64,
            group_size: 32,
            token_dim: 384,
            transformer_blocks: 12,
            heads: 6,
            channel_dim: 24,
            num_classes: 40,
            pos_hidden: 128,
            conv_widths: [128, 256, 512, 256],
            codec_hidden: 512,
            mlp_ratio: 4,
            fusion: Fusion::Sum,
            center_groups: true,
            strict_centering: false,
            dropout: 0.0,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            ln_eps: 1e-5,
        }
    }

    /// The same topology shrunk to train on one CPU core in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            preset: Preset::Desk,
            n_points: 256,
            n_keys: 32,
            group_size: 16,
            token_dim: 96,
            transformer_blocks: 2,
            heads: 3,
            channel_dim: 8,
            num_classes: 8,
            pos_hidden: 128,
            conv_widths: [32, 64, 128, 64],
            codec_hidden: 256,
            ..Self::paper()
        }
    }

    pub fn from_preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk | Preset::Custom => Self::desk(),
        }
    }

    pub fn tokens(&self) -> usize {
        self.n_keys + 1
    }

    /// Complex symbols per transmitted frame.
    pub fn n_symbols(&self) -> usize {
        self.tokens() * self.channel_dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_points", self.n_points),
            ("n_keys", self.n_keys),
            ("group_size", self.group_size),
            ("token_dim", self.token_dim),
            ("heads", self.heads),
            ("channel_dim", self.channel_dim),
            ("num_classes", self.num_classes),
            ("pos_hidden", self.pos_hidden),
            ("codec_hidden", self.codec_hidden),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_widths.contains(&0) {
            return Err(Error::Config("conv widths must be positive".into()));
        }
        if self.token_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "token_dim {} is not divisible by {} heads",
                self.token_dim, self.heads
            )));
        }
        if self.channel_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "channel_dim {} must be even to pair reals into complex symbols",
                self.channel_dim
            )));
        }
        if self.n_keys > self.n_points || self.group_size > self.n_points {
            return Err(Error::Config(format!(
                "{} keys of {} neighbours need at least that many of the {} points",
                self.n_keys, self.group_size, self.n_points
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("bn_momentum must be in (0, 1]".into()));
        }
        if !(self.bn_eps > 0.0 && self.ln_eps > 0.0) {
            return Err(Error::Config("normalization epsilons must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ModelConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::paper().n_symbols(), 780);
        assert_eq!(ModelConfig::desk().n_symbols(), 132);
    }

    #[test]
    fn odd_channel_dim_and_bad_heads_are_rejected() {
        let mut c = ModelConfig::desk();
        c.channel_dim = 7;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::desk();
        c.heads = 5;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let c = ModelConfig::paper();
        assert_eq!(ModelConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}

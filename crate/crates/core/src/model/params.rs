//! Named parameter tensors, their shapes as a function of the config, and
//! initialization.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use pcsc_tensor::{Scalar, Tensor};

use super::config::{Fusion, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Normal with std 0.02, redrawn outside two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

const INIT_STD: f64 = 0.02;

fn push(out: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: Init) {
    out.push(ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    });
}

fn linear(out: &mut Vec<ParamSpec>, prefix: &str, fan_out: usize, fan_in: usize) {
    push(out, format!("{prefix}.weight"), &[fan_out, fan_in], Init::TruncNormal);
    push(out, format!("{prefix}.bias"), &[fan_out], Init::Zeros);
}

fn norm(out: &mut Vec<ParamSpec>, prefix: &str, width: usize) {
    push(out, format!("{prefix}.weight"), &[width], Init::Ones);
    push(out, format!("{prefix}.bias"), &[width], Init::Zeros);
}

/// Every learnable tensor, in a fixed order.
pub fn param_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let d = c.token_dim;
    let [c1, c2, c3, c4] = c.conv_widths;
    let mut out = Vec::new();
    linear(&mut out, "pos.fc1", c.pos_hidden, 3);
    linear(&mut out, "pos.fc2", d, c.pos_hidden);

    linear(&mut out, "enc.conv1", c1, 3);
    norm(&mut out, "enc.bn1", c1);
    linear(&mut out, "enc.conv2", c2, c1);
    linear(&mut out, "enc.conv3", c3, 2 * c2);
    norm(&mut out, "enc.bn2", c3);
    linear(&mut out, "enc.conv4", c4, c3);
    linear(&mut out, "enc.fc", d, c4);

    if c.fusion == Fusion::ConcatProject {
        linear(&mut out, "fuse", d, 2 * d);
    }
    push(&mut out, "cls.token".into(), &[d], Init::TruncNormal);
    push(&mut out, "cls.pos".into(), &[d], Init::TruncNormal);

    let hidden = c.mlp_ratio * d;
    for i in 0..c.transformer_blocks {
        let p = format!("blocks.{i}");
        norm(&mut out, &format!("{p}.norm1"), d);
        linear(&mut out, &format!("{p}.attn.qkv"), 3 * d, d);
        linear(&mut out, &format!("{p}.attn.proj"), d, d);
        norm(&mut out, &format!("{p}.norm2"), d);
        linear(&mut out, &format!("{p}.mlp.fc1"), hidden, d);
        linear(&mut out, &format!("{p}.mlp.fc2"), d, hidden);
    }

    linear(&mut out, "chenc.fc1", c.codec_hidden, d);
    linear(&mut out, "chenc.fc2", c.channel_dim, c.codec_hidden);
    linear(&mut out, "chdec.fc1", c.codec_hidden, c.channel_dim);
    linear(&mut out, "chdec.fc2", d, c.codec_hidden);

    linear(&mut out, "head", c.num_classes, 2 * d);
    out
}

/// Batch-norm running statistics: mean starts at 0, variance at 1.
pub fn buffer_specs(c: &ModelConfig) -> Vec<ParamSpec> {
    let [c1, _, c3, _] = c.conv_widths;
    let mut out = Vec::new();
    for (bn, w) in [("enc.bn1", c1), ("enc.bn2", c3)] {
        push(&mut out, format!("{bn}.running_mean"), &[w], Init::Zeros);
        push(&mut out, format!("{bn}.running_var"), &[w], Init::Ones);
    }
    out
}

/// Learnable parameters and non-learnable buffers, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

fn fill<T: Scalar, R: Rng>(spec: &ParamSpec, rng: &mut R) -> Tensor<T> {
    let n = spec.shape.iter().product();
    let data = match spec.init {
        Init::Zeros => vec![T::zero(); n],
        Init::Ones => vec![T::one(); n],
        Init::TruncNormal => (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 2.0 {
                    break T::from_f64(INIT_STD * z);
                }
            })
            .collect(),
    };
    Tensor::new(&spec.shape, data).expect("spec shape matches data")
}

impl<T: Scalar> ParamStore<T> {
    /// Fresh initialization. Each tensor draws from its own stream keyed by
    /// its position, so adding a tensor does not reshuffle the others.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = param_specs(config)
            .iter()
            .map(|s| {
                let tag = s.name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
                let mut rng = rng_for(seed, &[0x1417, tag]);
                (s.name.clone(), fill(s, &mut rng))
            })
            .collect();
        let mut rng = rng_for(seed, &[0xb0f]);
        let buffers = buffer_specs(config)
            .iter()
            .map(|s| (s.name.clone(), fill(s, &mut rng)))
            .collect();
        Ok(ParamStore { params, buffers })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing buffer {name}")))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// Checks names and shapes against what `config` requires.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        for (kind, specs, map) in [
            ("parameter", param_specs(config), &self.params),
            ("buffer", buffer_specs(config), &self.buffers),
        ] {
            if specs.len() != map.len() {
                return Err(Error::Config(format!(
                    "expected {} {kind} tensors, found {}",
                    specs.len(),
                    map.len()
                )));
            }
            for s in specs {
                let t = map
                    .get(&s.name)
                    .ok_or_else(|| Error::Config(format!("missing {kind} {}", s.name)))?;
                if t.shape() != s.shape.as_slice() {
                    return Err(Error::Config(format!(
                        "{kind} {} has shape {:?}, config requires {:?}",
                        s.name,
                        t.shape(),
                        s.shape
                    )));
                }
            }
        }
        Ok(())
    }

    /// Converts precision, e.g. an `f32` training run to `f64` evaluation.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let conv = |m: &BTreeMap<String, Tensor<T>>| {
            m.iter()
                .map(|(k, t)| {
                    let data = t.data().iter().map(|&v| U::from_f64(Scalar::to_f64(v))).collect();
                    (k.clone(), Tensor::new(t.shape(), data).expect("same shape"))
                })
                .collect()
        };
        ParamStore {
            params: conv(&self.params),
            buffers: conv(&self.buffers),
        }
    }
}

/// Parameter count (excluding buffers) without allocating.
pub fn count_parameters(config: &ModelConfig) -> usize {
    param_specs(config)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

//! `PCCK` checkpoint format, all integers little-endian:
//!
//! ```text
//! "PCCK" | u32 version | u8 dtype bytes | u8 stage | u16 reserved
//! u32 config length | config TOML
//! [u8; 32] rng seed | u64 rng stream | u128 rng word position
//! u32 entries | per entry: u16 name length, name, u8 kind (0 param,
//!     1 buffer), u8 rank, rank x u64 dims, u64 byte offset into data
//! data: raw tensors
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pcsc_tensor::{Scalar, Tensor};

use super::config::ModelConfig;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTag {
    Init,
    Stage1,
    Stage2,
    /// Joint single-stage training from scratch (the no-pretrain ablation).
    Joint,
}

impl StageTag {
    fn code(self) -> u8 {
        match self {
            StageTag::Init => 0,
            StageTag::Stage1 => 1,
            StageTag::Stage2 => 2,
            StageTag::Joint => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => StageTag::Init,
            1 => StageTag::Stage1,
            2 => StageTag::Stage2,
            3 => StageTag::Joint,
            _ => return Err(Error::Format(format!("unknown stage tag {c}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            StageTag::Init => "init",
            StageTag::Stage1 => "stage1",
            StageTag::Stage2 => "stage2",
            StageTag::Joint => "joint",
        }
    }
}

/// Enough state to resume a ChaCha8 stream exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngSnapshot {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub stage: StageTag,
    pub params: ParamStore<T>,
    pub rng: RngSnapshot,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = self.config.to_toml()?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::BYTES as u8);
        out.push(self.stage.code());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let entries: Vec<(u8, &String, &Tensor<T>)> = self
            .params
            .params
            .iter()
            .map(|(k, t)| (0u8, k, t))
            .chain(self.params.buffers.iter().map(|(k, t)| (1u8, k, t)))
            .collect();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (kind, name, t) in &entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(*kind);
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += (t.len() * T::BYTES) as u64;
        }
        for (_, _, t) in &entries {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    /// Parses and validates a checkpoint: magic, version, element width,
    /// and every tensor shape against the embedded config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a PCCK checkpoint".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let dtype = r.u8()? as usize;
        if dtype != T::BYTES {
            return Err(Error::Format(format!(
                "checkpoint holds {dtype}-byte floats, expected {}",
                T::BYTES
            )));
        }
        let stage = StageTag::from_code(r.u8()?)?;
        r.u16()?;
        let clen = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(clen)?)
            .map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        let config = ModelConfig::from_toml(text)?;
        let rng = RngSnapshot {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: r.u128()?,
        };
        let n = r.u32()? as usize;
        let mut dir = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let kind = r.u8()?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            dir.push((kind, name, shape, offset));
        }
        let data = &bytes[r.pos..];
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for (kind, name, shape, offset) in dir {
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("{name}: shape overflows")))?;
            let end = count
                .checked_mul(T::BYTES)
                .and_then(|len| offset.checked_add(len))
                .filter(|&e| e <= data.len())
                .ok_or_else(|| Error::Format(format!("{name}: data out of bounds")))?;
            let values = data[offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
            let t = Tensor::new(&shape, values).map_err(|e| Error::Format(e.to_string()))?;
            let map = match kind {
                0 => &mut params,
                1 => &mut buffers,
                k => return Err(Error::Format(format!("{name}: unknown tensor kind {k}"))),
            };
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        let params = ParamStore { params, buffers };
        params.check_against(&config)?;
        Ok(Checkpoint {
            config,
            stage,
            params,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

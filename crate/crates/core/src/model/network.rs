//! Forward pass. Every stage takes a [`Session`], which binds named
//! parameters into one graph: trainable ones as differentiable leaves,
//! frozen ones as constants that never receive a gradient buffer.

use std::cell::RefCell;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pcsc_tensor::{AttentionParams, BatchStats, Gradients, Graph, Scalar, Var};

use super::config::{Fusion, ModelConfig};
use super::params::ParamStore;
use crate::channel::{normalize_power, transmit, ChannelSpec, SymbolFrame};
use crate::error::{Error, Result};
use crate::geometry::GroupedBatch;

/// Token matrix `[B, M + 1, D]`; token 0 is the CLS token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenEmbeddings {
    pub tokens: Var,
}

pub struct Session<'a, T: Scalar> {
    pub graph: &'a Graph<T>,
    pub config: &'a ModelConfig,
    store: &'a ParamStore<T>,
    trainable: Box<dyn Fn(&str) -> bool + 'a>,
    bound: RefCell<BTreeMap<String, Var>>,
    bn_stats: RefCell<Vec<(String, BatchStats<T>)>>,
    dropout_rng: RefCell<ChaCha8Rng>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(
        graph: &'a Graph<T>,
        config: &'a ModelConfig,
        store: &'a ParamStore<T>,
        trainable: impl Fn(&str) -> bool + 'a,
        dropout_seed: u64,
    ) -> Self {
        Session {
            graph,
            config,
            store,
            trainable: Box::new(trainable),
            bound: RefCell::new(BTreeMap::new()),
            bn_stats: RefCell::new(Vec::new()),
            dropout_rng: RefCell::new(ChaCha8Rng::seed_from_u64(dropout_seed)),
        }
    }

    /// Inference session: nothing trainable.
    pub fn frozen(graph: &'a Graph<T>, config: &'a ModelConfig, store: &'a ParamStore<T>) -> Self {
        Self::new(graph, config, store, |_| false, 0)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        (self.trainable)(name)
    }

    /// The graph node of parameter `name`, created on first use.
    pub fn p(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let t = self.store.param(name)?;
        let v = if self.is_trainable(name) {
            self.graph.param(t.data().to_vec(), t.shape())?
        } else {
            self.graph.constant(t.data().to_vec(), t.shape())?
        };
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Gradients of the trainable parameters used in this session.
    pub fn gradients(&self, grads: &mut Gradients<T>) -> BTreeMap<String, Vec<T>> {
        self.bound
            .borrow()
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
            .collect()
    }

    /// Batch statistics gathered by training-mode batch norms.
    pub fn take_bn_stats(&self) -> Vec<(String, BatchStats<T>)> {
        std::mem::take(&mut self.bn_stats.borrow_mut())
    }

    fn linear(&self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        Ok(self.graph.linear(x, w, Some(b))?)
    }

    fn conv(&self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        Ok(self.graph.pointwise_linear(x, w, Some(b))?)
    }

    /// Batch statistics only when the graph trains and the layer is not
    /// frozen; otherwise the running estimates.
    fn batch_norm(&self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.weight"))?;
        let beta = self.p(&format!("{prefix}.bias"))?;
        let eps = self.config.bn_eps;
        if self.graph.is_training() && self.is_trainable(&format!("{prefix}.weight")) {
            let (y, stats) = self.graph.batch_norm_train(x, gamma, beta, eps)?;
            self.bn_stats.borrow_mut().push((prefix.to_string(), stats));
            Ok(y)
        } else {
            let mean = self.store.buffer(&format!("{prefix}.running_mean"))?;
            let var = self.store.buffer(&format!("{prefix}.running_var"))?;
            Ok(self.graph.batch_norm_eval(x, gamma, beta, mean.data(), var.data(), eps)?)
        }
    }

    fn layer_norm(&self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.weight"))?;
        let beta = self.p(&format!("{prefix}.bias"))?;
        Ok(self.graph.layer_norm(x, gamma, beta, self.config.ln_eps)?)
    }

    fn dropout(&self, x: Var) -> Result<Var> {
        let p = self.config.dropout;
        Ok(self.graph.dropout(x, p, &mut *self.dropout_rng.borrow_mut())?)
    }
}

fn expect_shape<T: Scalar>(g: &Graph<T>, v: Var, want: &[usize], what: &str) -> Result<()> {
    let got = g.shape(v);
    if got != want {
        return Err(Error::Argument(format!("{what}: expected shape {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Per-key MLP `3 -> hidden -> D`, GELU after the first layer only.
pub fn positional_embed<T: Scalar>(s: &Session<'_, T>, keys: Var) -> Result<Var> {
    let shape = s.graph.shape(keys);
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::Argument(format!("keys must be [B, M, 3], got {shape:?}")));
    }
    let h = s.linear(keys, "pos.fc1")?;
    let h = s.graph.gelu(h)?;
    s.linear(h, "pos.fc2")
}

/// Shared point MLP with max pooling over each sub-cloud: `[B, M, k, 3]`
/// to `[B, M, D]`.
///
/// All `B * M * k` points are laid out along one axis so each convolution
/// is a single matrix product.
pub fn encode_subclouds<T: Scalar>(s: &Session<'_, T>, groups: Var, centered: bool) -> Result<Var> {
    let g = s.graph;
    let shape = g.shape(groups);
    let [b, m, k, 3] = shape[..] else {
        return Err(Error::Argument(format!("groups must be [B, M, k, 3], got {shape:?}")));
    };
    if s.config.strict_centering && !centered {
        return Err(Error::Contract("sub-clouds must be centered on their key point".into()));
    }
    let bm = b * m;
    let x = g.permute(groups, &[3, 0, 1, 2])?;
    let x = g.reshape(x, &[1, 3, bm * k])?;

    let h = s.conv(x, "enc.conv1")?;
    let h = s.batch_norm(h, "enc.bn1")?;
    let h = g.relu(h)?;
    let local = s.conv(h, "enc.conv2")?;
    let c2 = g.shape(local)[1];
    let pooled = g.max_pool(g.reshape(local, &[c2, bm, k])?, 2)?;
    let global = g.reshape(g.expand(pooled, 2, k)?, &[1, c2, bm * k])?;
    let h = g.concat(&[global, local], 1)?;

    let h = s.conv(h, "enc.conv3")?;
    let h = s.batch_norm(h, "enc.bn2")?;
    let h = g.relu(h)?;
    let h = s.conv(h, "enc.conv4")?;
    let c4 = g.shape(h)[1];
    let pooled = g.max_pool(g.reshape(h, &[c4, bm, k])?, 2)?;
    let feat = g.permute(pooled, &[1, 0])?;
    let out = s.linear(feat, "enc.fc")?;
    Ok(g.reshape(out, &[b, m, s.config.token_dim])?)
}

fn transformer_block<T: Scalar>(s: &Session<'_, T>, x: Var, i: usize) -> Result<Var> {
    let g = s.graph;
    let p = format!("blocks.{i}");
    let h = s.layer_norm(x, &format!("{p}.norm1"))?;
    let attn = AttentionParams {
        qkv_weight: s.p(&format!("{p}.attn.qkv.weight"))?,
        qkv_bias: Some(s.p(&format!("{p}.attn.qkv.bias"))?),
        proj_weight: s.p(&format!("{p}.attn.proj.weight"))?,
        proj_bias: Some(s.p(&format!("{p}.attn.proj.bias"))?),
    };
    let h = g.multi_head_self_attention(h, s.config.heads, &attn)?;
    let x = g.add(x, s.dropout(h)?)?;
    let h = s.layer_norm(x, &format!("{p}.norm2"))?;
    let h = s.linear(h, &format!("{p}.mlp.fc1"))?;
    let h = g.gelu(h)?;
    let h = s.linear(h, &format!("{p}.mlp.fc2"))?;
    Ok(g.add(x, s.dropout(h)?)?)
}

/// Fuses positional and semantic features, prepends the CLS token and runs
/// the pre-norm transformer stack.
pub fn semantic_encode<T: Scalar>(s: &Session<'_, T>, p: Var, feats: Var) -> Result<TokenEmbeddings> {
    let g = s.graph;
    let shape = g.shape(p);
    if shape != g.shape(feats) || shape.len() != 3 {
        return Err(Error::Argument(format!(
            "positional {shape:?} and semantic {:?} features must match as [B, M, D]",
            g.shape(feats)
        )));
    }
    let (b, d) = (shape[0], shape[2]);
    let tokens = match s.config.fusion {
        Fusion::Sum => g.add(feats, p)?,
        Fusion::ConcatProject => s.linear(g.concat(&[p, feats], 2)?, "fuse")?,
    };
    let cls = g.add(s.p("cls.token")?, s.p("cls.pos")?)?;
    let cls = g.expand(g.reshape(cls, &[1, d])?, 0, b)?;
    let mut x = g.concat(&[cls, tokens], 1)?;
    for i in 0..s.config.transformer_blocks {
        x = transformer_block(s, x, i)?;
    }
    Ok(TokenEmbeddings { tokens: x })
}

/// Per-token `D -> hidden -> d_c` map; consecutive reals pair into complex
/// symbols and each frame is scaled to unit power.
pub fn channel_encode<T: Scalar>(s: &Session<'_, T>, l: &TokenEmbeddings) -> Result<SymbolFrame> {
    let g = s.graph;
    let c = s.config;
    if c.channel_dim % 2 != 0 {
        return Err(Error::Config(format!("channel_dim {} is odd", c.channel_dim)));
    }
    let b = g.shape(l.tokens)[0];
    expect_shape(g, l.tokens, &[b, c.tokens(), c.token_dim], "channel_encode")?;
    let h = g.relu(s.linear(l.tokens, "chenc.fc1")?)?;
    let z = s.linear(h, "chenc.fc2")?;
    let x = g.reshape(z, &[b, c.n_symbols(), 2])?;
    normalize_power(g, &SymbolFrame::new(g, x)?)
}

/// Inverse reshaping and per-token `d_c -> hidden -> D`.
pub fn channel_decode<T: Scalar>(s: &Session<'_, T>, y: &SymbolFrame) -> Result<TokenEmbeddings> {
    let g = s.graph;
    let c = s.config;
    expect_shape(g, y.symbols, &[y.batch, c.n_symbols(), 2], "channel_decode")?;
    let z = g.reshape(y.symbols, &[y.batch, c.tokens(), c.channel_dim])?;
    let h = g.relu(s.linear(z, "chdec.fc1")?)?;
    Ok(TokenEmbeddings {
        tokens: s.linear(h, "chdec.fc2")?,
    })
}

/// `[CLS; max over tokens 1..=M]` followed by one linear layer to logits.
pub fn semantic_decode<T: Scalar>(s: &Session<'_, T>, l_hat: &TokenEmbeddings) -> Result<Var> {
    let g = s.graph;
    let c = s.config;
    let b = g.shape(l_hat.tokens)[0];
    expect_shape(g, l_hat.tokens, &[b, c.tokens(), c.token_dim], "semantic_decode")?;
    let cls = g.reshape(g.narrow(l_hat.tokens, 1, 0, 1)?, &[b, c.token_dim])?;
    let pooled = g.max_pool(g.narrow(l_hat.tokens, 1, 1, c.n_keys)?, 1)?;
    let feat = g.concat(&[cls, pooled], 1)?;
    s.linear(feat, "head")
}

/// Grouped inputs of one batch, flattened for the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch<T> {
    pub batch: usize,
    /// `[B, M, 3]`
    pub keys: Vec<T>,
    /// `[B, M, k, 3]`
    pub groups: Vec<T>,
    pub centered: bool,
    pub labels: Vec<usize>,
    /// Noise stream of each sample (its index in the split).
    pub streams: Vec<u64>,
}

impl<T: Scalar> InputBatch<T> {
    pub fn from_groups(
        config: &ModelConfig,
        grouped: &[&GroupedBatch],
        labels: Vec<usize>,
        streams: Vec<u64>,
    ) -> Result<Self> {
        let b = grouped.len();
        if labels.len() != b || streams.len() != b {
            return Err(Error::Argument("labels and streams must match the batch".into()));
        }
        let (m, k) = (config.n_keys, config.group_size);
        let mut keys = Vec::with_capacity(b * m * 3);
        let mut groups = Vec::with_capacity(b * m * k * 3);
        let centered = grouped.first().is_none_or(|g| g.centered);
        for gb in grouped {
            if gb.n_keys() != m || gb.k != k || gb.centered != centered {
                return Err(Error::Argument(format!(
                    "grouped cloud has {} keys of {} points, config wants {m} of {k}",
                    gb.n_keys(),
                    gb.k
                )));
            }
            keys.extend(gb.keys.iter().flatten().map(|&v| T::from_f64(v)));
            groups.extend(gb.groups.iter().flatten().map(|&v| T::from_f64(v)));
        }
        Ok(InputBatch {
            batch: b,
            keys,
            groups,
            centered,
            labels,
            streams,
        })
    }
}

/// Whether latent tokens reach the decoder directly or through the channel.
#[derive(Debug, Clone, Copy)]
pub enum Route<'a> {
    Direct,
    Channel(&'a ChannelSpec),
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logits: Var,
    /// L, the semantic encoder output.
    pub latent: TokenEmbeddings,
    /// L-hat, present when the channel path ran.
    pub recovered: Option<TokenEmbeddings>,
    pub sent: Option<SymbolFrame>,
}

pub fn forward<T: Scalar>(
    s: &Session<'_, T>,
    input: &InputBatch<T>,
    route: Route<'_>,
) -> Result<ForwardOutput> {
    let g = s.graph;
    let c = s.config;
    let b = input.batch;
    let keys = g.constant(input.keys.clone(), &[b, c.n_keys, 3])?;
    let groups = g.constant(input.groups.clone(), &[b, c.n_keys, c.group_size, 3])?;
    let p = positional_embed(s, keys)?;
    let feats = encode_subclouds(s, groups, input.centered)?;
    let latent = semantic_encode(s, p, feats)?;
    match route {
        Route::Direct => Ok(ForwardOutput {
            logits: semantic_decode(s, &latent)?,
            latent,
            recovered: None,
            sent: None,
        }),
        Route::Channel(spec) => {
            let sent = channel_encode(s, &latent)?;
            let received = transmit(g, &sent, spec, &input.streams)?;
            let recovered = channel_decode(s, &received)?;
            Ok(ForwardOutput {
                logits: semantic_decode(s, &recovered)?,
                latent,
                recovered: Some(recovered),
                sent: Some(sent),
            })
        }
    }
}

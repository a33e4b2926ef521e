use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Projections of one self-attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    /// `[3D, D]`, rows ordered query, key, value.
    pub qkv_weight: Var,
    pub qkv_bias: Option<Var>,
    /// `[D, D]`
    pub proj_weight: Var,
    pub proj_bias: Option<Var>,
}

impl<T: Scalar> Graph<T> {
    /// Multi-head scaled dot-product self-attention over `x[B, T, D]`.
    ///
    /// Heads split `D` evenly; the output has the shape of the input.
    pub fn multi_head_self_attention(
        &self,
        x: Var,
        heads: usize,
        p: &AttentionParams,
    ) -> Result<Var> {
        let shape = self.shape(x);
        let [b, t, d] = shape[..] else {
            return Err(TensorError::InvalidArgument {
                op: "multi_head_self_attention",
                msg: format!("expected [B, T, D], got {shape:?}"),
            });
        };
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Config {
                op: "multi_head_self_attention",
                msg: format!("token width {d} not divisible by {heads} heads"),
            });
        }
        let dh = d / heads;
        let qkv = self.linear(x, p.qkv_weight, p.qkv_bias)?;
        let qkv = self.reshape(qkv, &[b, t, 3, heads, dh])?;
        let qkv = self.permute(qkv, &[2, 0, 3, 1, 4])?;
        let part = |i: usize| -> Result<Var> {
            let v = self.narrow(qkv, 0, i, 1)?;
            self.reshape(v, &[b * heads, t, dh])
        };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = self.matmul_nt(q, k)?;
        let scores = self.scale(scores, T::from_f64(1.0 / (dh as f64).sqrt()))?;
        let attn = self.softmax(scores)?;
        let ctx = self.matmul(attn, v)?;
        let ctx = self.reshape(ctx, &[b, heads, t, dh])?;
        let ctx = self.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.reshape(ctx, &[b, t, d])?;
        self.linear(ctx, p.proj_weight, p.proj_bias)
    }
}

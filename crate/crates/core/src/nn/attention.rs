use super::{join, Init, Linear, Module, NamedTensor};
use crate::autodiff::Var;
use crate::error::{Result, SeldError};

/// Multi-head scaled dot-product attention with learned Q/K/V/output
/// projections. Self-attention is `forward(x, x)`; cross-attention takes
/// queries from one stream and keys/values from another.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(SeldError::Config(format!(
                "model width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(init, dim, dim),
            key: Linear::new(init, dim, dim),
            value: Linear::new(init, dim, dim),
            output: Linear::new(init, dim, dim),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.in_features()
    }

    /// `[B, T, D]` queries against `[B, S, D]` keys/values.
    pub fn forward(&self, q_src: &Var, kv_src: &Var) -> Result<Var> {
        Ok(self.forward_with_weights(q_src, kv_src)?.0)
    }

    /// Also returns the attention probabilities `[B, H, T, S]`.
    pub fn forward_with_weights(&self, q_src: &Var, kv_src: &Var) -> Result<(Var, Var)> {
        let (qs, ks) = (q_src.shape(), kv_src.shape());
        let d = self.dim();
        if qs.len() != 3 || ks.len() != 3 || qs[0] != ks[0] || qs[2] != d || ks[2] != d {
            return Err(SeldError::shape(
                "attention",
                format!("query {qs:?} and key/value {ks:?} must be [B, T, {d}] with equal B"),
            ));
        }
        let (b, t, s) = (qs[0], qs[1], ks[1]);
        let h = self.heads;
        let dh = d / h;
        let split = |x: Var, len: usize| -> Result<Var> {
            x.reshape(&[b, len, h, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b * h, len, dh])
        };
        let q = split(self.query.forward(q_src)?, t)?;
        let k = split(self.key.forward(kv_src)?, s)?;
        let v = split(self.value.forward(kv_src)?, s)?;
        let scores = q.matmul(&k.transpose(1, 2)?)?.scale(1.0 / (dh as f64).sqrt());
        let weights = scores.softmax()?;
        let ctx = weights
            .matmul(&v)?
            .reshape(&[b, h, t, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, d])?;
        let out = self.output.forward(&ctx)?;
        Ok((out, weights.reshape(&[b, h, t, s])?))
    }
}

impl Module for MultiHeadAttention {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.query.visit(&join(prefix, "query"), out);
        self.key.visit(&join(prefix, "key"), out);
        self.value.visit(&join(prefix, "value"), out);
        self.output.visit(&join(prefix, "output"), out);
    }
}

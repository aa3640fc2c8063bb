//! Conformer encoder: macaron feed-forward pair around self-attention and a
//! depthwise convolution sub-block.
//!
//! ```text
//! x = x + ½·FF(x)
//! x = x + MHSA(LN(x))
//! x = x + Conv(x)      LN → pointwise(D→2D) → GLU → depthwise(K) → BN → swish → pointwise
//! x = x + ½·FF(x)
//! y = LN(x)
//! ```
//!
//! A stack adds a sinusoidal absolute position table to its input once.

use super::{join, BatchNorm, Ctx, Init, LayerNorm, Linear, Module, MultiHeadAttention, NamedTensor};
use crate::autodiff::{sinusoidal_table, Var};
use crate::error::{Result, SeldError};

#[derive(Debug, Clone, PartialEq)]
pub struct ConformerConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub kernel: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub positional_encoding: bool,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        Self {
            dim: 512,
            heads: 8,
            layers: 4,
            kernel: 51,
            ff_mult: 4,
            dropout: 0.05,
            positional_encoding: true,
        }
    }
}

impl ConformerConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub norm: LayerNorm,
    pub up: Linear,
    pub down: Linear,
    pub dropout: f64,
}

impl FeedForward {
    pub fn new(init: &mut Init, dim: usize, mult: usize, dropout: f64) -> Self {
        Self {
            norm: LayerNorm::new(init, dim),
            up: Linear::new(init, dim, dim * mult),
            down: Linear::new(init, dim * mult, dim),
            dropout,
        }
    }

    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let h = self.up.forward(&self.norm.forward(x)?)?.swish();
        let h = ctx.dropout(&h, self.dropout)?;
        let h = self.down.forward(&h)?;
        ctx.dropout(&h, self.dropout)
    }
}

impl Module for FeedForward {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.norm.visit(&join(prefix, "norm"), out);
        self.up.visit(&join(prefix, "up"), out);
        self.down.visit(&join(prefix, "down"), out);
    }
}

#[derive(Debug, Clone)]
pub struct ConvModule {
    pub norm: LayerNorm,
    pub pointwise_in: Linear,
    pub depthwise_weight: Var,
    pub depthwise_bias: Var,
    pub batch_norm: BatchNorm,
    pub pointwise_out: Linear,
    pub dropout: f64,
}

impl ConvModule {
    pub fn new(init: &mut Init, dim: usize, kernel: usize, dropout: f64) -> Self {
        Self {
            norm: LayerNorm::new(init, dim),
            pointwise_in: Linear::new(init, dim, 2 * dim),
            depthwise_weight: init.fan_in(&[dim, kernel], kernel),
            depthwise_bias: init.zeros(&[dim]),
            batch_norm: BatchNorm::new(init, dim, 2),
            pointwise_out: Linear::new(init, dim, dim),
            dropout,
        }
    }

    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let h = self.pointwise_in.forward(&self.norm.forward(x)?)?.glu(2)?;
        let h = h.depthwise_conv1d(&self.depthwise_weight, &self.depthwise_bias)?;
        let h = self.batch_norm.forward(&h, ctx)?.swish();
        let h = self.pointwise_out.forward(&h)?;
        ctx.dropout(&h, self.dropout)
    }
}

impl Module for ConvModule {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.norm.visit(&join(prefix, "norm"), out);
        self.pointwise_in.visit(&join(prefix, "pointwise_in"), out);
        super::push_param(out, prefix, "depthwise.weight", &self.depthwise_weight);
        super::push_param(out, prefix, "depthwise.bias", &self.depthwise_bias);
        self.batch_norm.visit(&join(prefix, "batch_norm"), out);
        self.pointwise_out.visit(&join(prefix, "pointwise_out"), out);
    }
}

#[derive(Debug, Clone)]
pub struct ConformerBlock {
    pub ff1: FeedForward,
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub conv: ConvModule,
    pub ff2: FeedForward,
    pub final_norm: LayerNorm,
    pub dropout: f64,
}

impl ConformerBlock {
    pub fn new(init: &mut Init, cfg: &ConformerConfig) -> Result<Self> {
        Ok(Self {
            ff1: FeedForward::new(init, cfg.dim, cfg.ff_mult, cfg.dropout),
            attn_norm: LayerNorm::new(init, cfg.dim),
            attn: MultiHeadAttention::new(init, cfg.dim, cfg.heads)?,
            conv: ConvModule::new(init, cfg.dim, cfg.kernel, cfg.dropout),
            ff2: FeedForward::new(init, cfg.dim, cfg.ff_mult, cfg.dropout),
            final_norm: LayerNorm::new(init, cfg.dim),
            dropout: cfg.dropout,
        })
    }

    /// `[B, T, D] -> [B, T, D]`
    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let x = x.add(&self.ff1.forward(x, ctx)?.scale(0.5))?;
        let a = self.attn_norm.forward(&x)?;
        let a = self.attn.forward(&a, &a)?;
        let x = x.add(&ctx.dropout(&a, self.dropout)?)?;
        let x = x.add(&self.conv.forward(&x, ctx)?)?;
        let x = x.add(&self.ff2.forward(&x, ctx)?.scale(0.5))?;
        self.final_norm.forward(&x)
    }
}

impl Module for ConformerBlock {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.ff1.visit(&join(prefix, "ff1"), out);
        self.attn_norm.visit(&join(prefix, "attn_norm"), out);
        self.attn.visit(&join(prefix, "attn"), out);
        self.conv.visit(&join(prefix, "conv"), out);
        self.ff2.visit(&join(prefix, "ff2"), out);
        self.final_norm.visit(&join(prefix, "final_norm"), out);
    }
}

#[derive(Debug, Clone)]
pub struct ConformerStack {
    pub blocks: Vec<ConformerBlock>,
    pub positional_encoding: bool,
}

impl ConformerStack {
    pub fn new(init: &mut Init, cfg: &ConformerConfig) -> Result<Self> {
        if cfg.kernel % 2 == 0 {
            return Err(SeldError::Config(format!("depthwise kernel {} must be odd", cfg.kernel)));
        }
        let blocks = (0..cfg.layers)
            .map(|_| ConformerBlock::new(init, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            positional_encoding: cfg.positional_encoding,
        })
    }

    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let s = x.shape();
        if s.len() != 3 || s[1] == 0 {
            return Err(SeldError::Input(format!("conformer expects [B, T>=1, D], got {s:?}")));
        }
        let mut h = if self.positional_encoding {
            let pe = Var::constant(sinusoidal_table(s[1], s[2]), &[s[1], s[2]])?;
            x.add(&pe)?
        } else {
            x.clone()
        };
        for block in &self.blocks {
            h = block.forward(&h, ctx)?;
        }
        Ok(h)
    }
}

impl Module for ConformerStack {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ConformerConfig {
        ConformerConfig {
            dim: 8,
            heads: 2,
            layers: 2,
            kernel: 3,
            ff_mult: 2,
            dropout: 0.0,
            positional_encoding: true,
        }
    }

    #[test]
    fn preserves_shape() {
        let mut init = Init::new(0);
        let c = ConformerStack::new(&mut init, &tiny()).unwrap();
        let x = init.uniform(&[2, 5, 8], 1.0);
        let y = c.forward(&x, &mut Ctx::train(0)).unwrap();
        assert_eq!(y.shape(), &[2, 5, 8]);
    }

    #[test]
    fn empty_sequence_is_input_error() {
        let c = ConformerStack::new(&mut Init::new(0), &tiny()).unwrap();
        let err = c.forward(&Var::zeros(&[1, 0, 8]), &mut Ctx::eval()).unwrap_err();
        assert!(matches!(err, SeldError::Input(_)));
    }

    #[test]
    fn even_kernel_rejected() {
        let cfg = ConformerConfig { kernel: 4, ..tiny() };
        assert!(ConformerStack::new(&mut Init::new(0), &cfg).is_err());
    }
}

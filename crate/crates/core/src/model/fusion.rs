use super::{FusionKind, ModelConfig};
use crate::autodiff::{concat, Var};
use crate::error::{Result, SeldError};
use crate::nn::{join, BiGru, ConformerStack, Ctx, FeedForward, Init, LayerNorm, Module, MultiHeadAttention, NamedTensor};

/// One stream's block: `x + SA(LN x) + CA(LN x, LN other)`, then a
/// residual feed-forward. Without `self_attention` only the cross branch
/// is kept.
#[derive(Debug, Clone)]
pub struct CrossModalBlock {
    pub query_norm: LayerNorm,
    pub context_norm: LayerNorm,
    pub self_attention: Option<MultiHeadAttention>,
    pub cross_attention: MultiHeadAttention,
    pub feed_forward: FeedForward,
    pub dropout: f64,
}

impl CrossModalBlock {
    pub fn new(init: &mut Init, dim: usize, heads: usize, ff_mult: usize, dropout: f64, with_self: bool) -> Result<Self> {
        Ok(Self {
            query_norm: LayerNorm::new(init, dim),
            context_norm: LayerNorm::new(init, dim),
            self_attention: if with_self {
                Some(MultiHeadAttention::new(init, dim, heads)?)
            } else {
                None
            },
            cross_attention: MultiHeadAttention::new(init, dim, heads)?,
            feed_forward: FeedForward::new(init, dim, ff_mult, dropout),
            dropout,
        })
    }

    pub fn forward(&self, x: &Var, other: &Var, ctx: &mut Ctx) -> Result<Var> {
        let q = self.query_norm.forward(x)?;
        let kv = self.context_norm.forward(other)?;
        let mut h = x.add(&ctx.dropout(&self.cross_attention.forward(&q, &kv)?, self.dropout)?)?;
        if let Some(sa) = &self.self_attention {
            h = h.add(&ctx.dropout(&sa.forward(&q, &q)?, self.dropout)?)?;
        }
        h.add(&self.feed_forward.forward(&h, ctx)?)
    }
}

impl Module for CrossModalBlock {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.query_norm.visit(&join(prefix, "query_norm"), out);
        self.context_norm.visit(&join(prefix, "context_norm"), out);
        if let Some(sa) = &self.self_attention {
            sa.visit(&join(prefix, "self_attention"), out);
        }
        self.cross_attention.visit(&join(prefix, "cross_attention"), out);
        self.feed_forward.visit(&join(prefix, "feed_forward"), out);
    }
}

/// Two parallel blocks updating the audio and visual streams from the
/// previous layer's pair.
#[derive(Debug, Clone)]
pub struct CrossModalLayer {
    pub audio: CrossModalBlock,
    pub visual: CrossModalBlock,
}

impl CrossModalLayer {
    pub fn forward(&self, a: &Var, v: &Var, ctx: &mut Ctx) -> Result<(Var, Var)> {
        let a2 = self.audio.forward(a, v, ctx)?;
        let v2 = self.visual.forward(v, a, ctx)?;
        Ok((a2, v2))
    }
}

#[derive(Debug, Clone)]
pub enum Fusion {
    Conformer(ConformerStack),
    CrossModal(Vec<CrossModalLayer>),
    Gru(BiGru),
}

impl Fusion {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.embed_dim;
        Ok(match cfg.fusion {
            FusionKind::AvConformer => Fusion::Conformer(ConformerStack::new(init, &cfg.conformer(2 * d))?),
            FusionKind::Cmaf | FusionKind::CrossAttention => {
                let with_self = cfg.fusion == FusionKind::Cmaf;
                let block = |init: &mut Init| CrossModalBlock::new(init, d, cfg.heads, cfg.ff_mult, cfg.dropout, with_self);
                let layers = (0..cfg.fusion_layers)
                    .map(|_| {
                        Ok(CrossModalLayer {
                            audio: block(init)?,
                            visual: block(init)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Fusion::CrossModal(layers)
            }
            FusionKind::Gru => Fusion::Gru(BiGru::new(init, 2 * d, 2 * d, cfg.gru_layers)?),
        })
    }

    /// `[B, T, D]` audio and visual embeddings → `[B, T, 2D]`.
    pub fn forward(&self, audio: &Var, visual: &Var, ctx: &mut Ctx) -> Result<Var> {
        if audio.shape() != visual.shape() {
            return Err(SeldError::shape(
                "fuse",
                format!("audio {:?} and visual {:?} embeddings differ", audio.shape(), visual.shape()),
            ));
        }
        match self {
            Fusion::Conformer(stack) => stack.forward(&concat(&[audio.clone(), visual.clone()], 2)?, ctx),
            Fusion::CrossModal(layers) => {
                let (mut a, mut v) = (audio.clone(), visual.clone());
                for layer in layers {
                    (a, v) = layer.forward(&a, &v, ctx)?;
                }
                concat(&[a, v], 2)
            }
            Fusion::Gru(gru) => gru.forward(&concat(&[audio.clone(), visual.clone()], 2)?),
        }
    }
}

impl Module for Fusion {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        match self {
            Fusion::Conformer(stack) => stack.visit(prefix, out),
            Fusion::CrossModal(layers) => {
                for (i, l) in layers.iter().enumerate() {
                    l.audio.visit(&join(prefix, &format!("layers.{i}.audio")), out);
                    l.visual.visit(&join(prefix, &format!("layers.{i}.visual")), out);
                }
            }
            Fusion::Gru(gru) => gru.visit(prefix, out),
        }
    }
}

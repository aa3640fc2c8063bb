//! The audio-only, visual-only and audio-visual model family with an
//! m-ACCDOA output head.

mod audio;
mod config;
mod fusion;
mod visual;

pub use audio::{AudioEncoder, ResidualBlock};
pub use config::{FusionKind, ModelConfig, Variant, VisualEncoderKind};
pub use fusion::{CrossModalBlock, CrossModalLayer, Fusion};
pub use visual::{temporal_resampler, HalfEncoder, VisualEmbedder};

use crate::augment::EquirectFrame;
use crate::autodiff::Var;
use crate::error::{Result, SeldError};
use crate::features::SpectralFeatures;
use crate::nn::{join, ConformerStack, Ctx, Init, Linear, Module, NamedTensor};

/// Two linear layers, ReLU between and tanh after, reshaped to
/// `[B, T, tracks, classes, 3]`.
#[derive(Debug, Clone)]
pub struct AccdoaHead {
    pub hidden: Linear,
    pub output: Linear,
    pub tracks: usize,
    pub classes: usize,
}

impl AccdoaHead {
    pub fn new(init: &mut Init, input: usize, hidden: usize, tracks: usize, classes: usize) -> Self {
        Self {
            hidden: Linear::new(init, input, hidden),
            // small initial outputs start training near the empty prediction
            output: Linear {
                weight: init.uniform(&[hidden, tracks * classes * 3], 0.1 * (3.0 / hidden as f64).sqrt()),
                bias: init.zeros(&[tracks * classes * 3]),
            },
            tracks,
            classes,
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var> {
        let s = x.shape().to_vec();
        if s.len() != 3 {
            return Err(SeldError::shape("head", format!("input {s:?} must be [B, T, D]")));
        }
        let h = self.output.forward(&self.hidden.forward(x)?.relu())?.tanh();
        h.reshape(&[s[0], s[1], self.tracks, self.classes, 3])
    }
}

impl Module for AccdoaHead {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.hidden.visit(&join(prefix, "hidden"), out);
        self.output.visit(&join(prefix, "output"), out);
    }
}

/// Model inputs: features `[B, 7, T_in, mel]` and prepared frames
/// `[B, T, 2, 3, S, S]` (see [`VisualEmbedder::prepare_batch`]).
#[derive(Debug, Clone, Default)]
pub struct ModelInput {
    pub audio: Option<Var>,
    pub visual: Option<Var>,
}

/// Intermediate embeddings alongside the output.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub audio: Option<Var>,
    pub visual: Option<Var>,
    /// Input of the head.
    pub fused: Var,
    pub accdoa: Var,
}

#[derive(Debug, Clone)]
pub struct SeldModel {
    pub config: ModelConfig,
    pub audio: Option<AudioEncoder>,
    pub visual: Option<VisualEmbedder>,
    pub fusion: Option<Fusion>,
    /// Depth-matching Conformer of the single-modality variants.
    pub extra: Option<ConformerStack>,
    pub head: AccdoaHead,
}

impl SeldModel {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let cfg = config;
        let audio = if cfg.uses_audio() { Some(AudioEncoder::new(&mut init, cfg)?) } else { None };
        let visual = if cfg.uses_visual() { Some(VisualEmbedder::new(&mut init, cfg)?) } else { None };
        let (fusion, extra, head_in) = if cfg.variant == Variant::AudioVisual {
            (Some(Fusion::new(&mut init, cfg)?), None, 2 * cfg.embed_dim)
        } else {
            (None, Some(ConformerStack::new(&mut init, &cfg.conformer(cfg.embed_dim))?), cfg.embed_dim)
        };
        let head = AccdoaHead::new(&mut init, head_in, cfg.embed_dim, cfg.tracks, cfg.classes);
        Ok(Self {
            config: cfg.clone(),
            audio,
            visual,
            fusion,
            extra,
            head,
        })
    }

    pub fn audio_batch(&self, feats: &[&SpectralFeatures]) -> Result<Var> {
        features_batch(feats)
    }

    pub fn visual_batch(&self, frames: &[Vec<EquirectFrame>]) -> Result<Var> {
        match &self.visual {
            Some(v) => v.prepare_batch(frames),
            None => Err(SeldError::Config(format!("{} model has no visual input", self.config.variant))),
        }
    }

    pub fn forward_parts(&self, input: &ModelInput, ctx: &mut Ctx) -> Result<ModelOutput> {
        let missing = |m: &str| SeldError::Config(format!("{} model needs {m} input", self.config.variant));
        let audio = match &self.audio {
            Some(enc) => Some(enc.forward(input.audio.as_ref().ok_or_else(|| missing("audio"))?, ctx)?),
            None => None,
        };
        let visual = match &self.visual {
            Some(enc) => Some(enc.forward(input.visual.as_ref().ok_or_else(|| missing("visual"))?, ctx)?),
            None => None,
        };
        let fused = match (&self.fusion, &self.extra, &audio, &visual) {
            (Some(f), _, Some(a), Some(v)) => f.forward(a, v, ctx)?,
            (None, Some(x), Some(a), None) | (None, Some(x), None, Some(a)) => x.forward(a, ctx)?,
            _ => unreachable!("modules follow the variant"),
        };
        let accdoa = self.head.forward(&fused)?;
        Ok(ModelOutput { audio, visual, fused, accdoa })
    }

    /// `[B, T, tracks, classes, 3]` m-ACCDOA output.
    pub fn forward(&self, input: &ModelInput, ctx: &mut Ctx) -> Result<Var> {
        Ok(self.forward_parts(input, ctx)?.accdoa)
    }
}

impl Module for SeldModel {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        if let Some(a) = &self.audio {
            a.visit(&join(prefix, "audio"), out);
        }
        if let Some(v) = &self.visual {
            v.visit(&join(prefix, "visual"), out);
        }
        if let Some(f) = &self.fusion {
            f.visit(&join(prefix, "fusion"), out);
        }
        if let Some(x) = &self.extra {
            x.visit(&join(prefix, "extra"), out);
        }
        self.head.visit(&join(prefix, "head"), out);
    }
}

/// Stacks feature clips of equal shape into `[B, C, T, mel]`.
pub fn features_batch(feats: &[&SpectralFeatures]) -> Result<Var> {
    let first = feats.first().ok_or_else(|| SeldError::Input("empty feature batch".into()))?;
    let (c, t, m) = first.shape();
    let mut data = Vec::with_capacity(feats.len() * c * t * m);
    for f in feats {
        if f.shape() != (c, t, m) {
            return Err(SeldError::shape("features_batch", format!("{:?} vs {:?}", f.shape(), (c, t, m))));
        }
        data.extend_from_slice(&f.data);
    }
    Var::constant(data, &[feats.len(), c, t, m])
}

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SeldError};
use crate::nn::ConformerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    AudioOnly,
    VisualOnly,
    AudioVisual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Concatenation followed by a Conformer at twice the width.
    AvConformer,
    /// Parallel per-modality blocks with self- and cross-attention.
    Cmaf,
    /// As `Cmaf` without the self-attention branch.
    CrossAttention,
    /// Concatenation followed by a bidirectional GRU.
    Gru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisualEncoderKind {
    PatchProjection,
    SplitPoolCnn,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = SeldError;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($ty::$variant),)+
                    other => Err(SeldError::Config(format!(
                        "unknown {} `{other}`; expected one of: {}",
                        stringify!($ty),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(Variant { AudioOnly => "ao", VisualOnly => "vo", AudioVisual => "av" });
text_enum!(FusionKind { AvConformer => "av_conformer", Cmaf => "cmaf", CrossAttention => "ca", Gru => "gru" });
text_enum!(VisualEncoderKind { PatchProjection => "patch_projection", SplitPoolCnn => "split_pool_cnn" });

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub fusion: FusionKind,
    pub visual_encoder: VisualEncoderKind,
    pub embed_dim: usize,
    /// Layers of every Conformer stack and of the cross-modal fusion.
    pub fusion_layers: usize,
    pub heads: usize,
    pub tracks: usize,
    pub classes: usize,
    /// Output channels of each residual block; the last equals `embed_dim`.
    pub cnn_channels: Vec<usize>,
    pub conv_kernel: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub gru_layers: usize,
    pub feature_channels: usize,
    pub mel_bins: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Side of the averaged square patches in `patch_projection`.
    pub patch: usize,
    /// Input downsampling of `split_pool_cnn` before its convolutions.
    pub cnn_pool: usize,
    pub visual_channels: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::AudioVisual,
            fusion: FusionKind::Cmaf,
            visual_encoder: VisualEncoderKind::PatchProjection,
            embed_dim: 512,
            fusion_layers: 4,
            heads: 8,
            tracks: 3,
            classes: 13,
            cnn_channels: vec![64, 128, 256, 512],
            conv_kernel: 51,
            ff_mult: 4,
            dropout: 0.05,
            gru_layers: 2,
            feature_channels: 7,
            mel_bins: 128,
            frame_width: 448,
            frame_height: 224,
            patch: 16,
            cnn_pool: 4,
            visual_channels: vec![16, 32],
        }
    }
}

impl ModelConfig {
    /// Reduced widths for CPU training runs.
    pub fn desk(variant: Variant, fusion: FusionKind) -> Self {
        Self {
            variant,
            fusion,
            embed_dim: 128,
            fusion_layers: 2,
            heads: 4,
            cnn_channels: vec![8, 16, 32, 128],
            conv_kernel: 15,
            ff_mult: 2,
            dropout: 0.0,
            ..Self::default()
        }
    }

    /// Time downsampling of the audio encoder.
    pub fn audio_stride(&self) -> usize {
        1 << self.cnn_channels.len()
    }

    pub fn output_width(&self) -> usize {
        self.tracks * self.classes * 3
    }

    pub fn uses_audio(&self) -> bool {
        self.variant != Variant::VisualOnly
    }

    pub fn uses_visual(&self) -> bool {
        self.variant != Variant::AudioOnly
    }

    pub(crate) fn conformer(&self, dim: usize) -> ConformerConfig {
        ConformerConfig {
            dim,
            heads: self.heads,
            layers: self.fusion_layers,
            kernel: self.conv_kernel,
            ff_mult: self.ff_mult,
            dropout: self.dropout,
            positional_encoding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SeldError::Config(m));
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} must be a positive multiple of heads {}", self.embed_dim, self.heads));
        }
        if self.cnn_channels.is_empty() || *self.cnn_channels.last().unwrap() != self.embed_dim {
            return bad(format!("last cnn channel count must equal embed_dim {}", self.embed_dim));
        }
        if self.mel_bins % self.audio_stride() != 0 {
            return bad(format!("mel_bins {} not divisible by {}", self.mel_bins, self.audio_stride()));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel {} must be odd", self.conv_kernel));
        }
        if self.frame_width != 2 * self.frame_height {
            return bad(format!("frames {}x{} must be 2:1", self.frame_width, self.frame_height));
        }
        if self.patch == 0 || self.frame_height % self.patch != 0 {
            return bad(format!("patch {} must divide frame height {}", self.patch, self.frame_height));
        }
        let cnn_side = self.frame_height / self.cnn_pool.max(1);
        if self.cnn_pool == 0 || self.frame_height % self.cnn_pool != 0 || cnn_side >> self.visual_channels.len() == 0 {
            return bad(format!("cnn_pool {} incompatible with frame height {}", self.cnn_pool, self.frame_height));
        }
        if self.visual_channels.is_empty() {
            return bad("visual_channels must not be empty".into());
        }
        if self.tracks == 0 || self.classes == 0 || self.fusion_layers == 0 || self.gru_layers == 0 {
            return bad("tracks, classes and layer counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

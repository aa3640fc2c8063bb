use super::ModelConfig;
use crate::autodiff::Var;
use crate::error::{Result, SeldError};
use crate::nn::{join, BatchNorm, Conv2d, ConformerStack, Ctx, Init, Module, NamedTensor};

/// Two 3×3 convolutions with a 1×1 shortcut, then average pooling by 2,
/// batch norm and ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub shortcut: Conv2d,
    pub norm: BatchNorm,
}

impl ResidualBlock {
    pub fn new(init: &mut Init, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::new(init, cin, cout, 3),
            conv2: Conv2d::new(init, cout, cout, 3),
            shortcut: Conv2d::new(init, cin, cout, 1),
            norm: BatchNorm::new(init, cout, 1),
        }
    }

    /// `[B, Cin, T, F]` → `[B, Cout, T/2, F/2]`.
    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let h = self.conv2.forward(&self.conv1.forward(x)?.relu())?;
        let h = h.add(&self.shortcut.forward(x)?)?.avg_pool2d(2, 2)?;
        Ok(self.norm.forward(&h, ctx)?.relu())
    }
}

impl Module for ResidualBlock {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.conv1.visit(&join(prefix, "conv1"), out);
        self.conv2.visit(&join(prefix, "conv2"), out);
        self.shortcut.visit(&join(prefix, "shortcut"), out);
        self.norm.visit(&join(prefix, "norm"), out);
    }
}

/// Per-channel input normalisation, a residual CNN over
/// `[B, channels, T, mel]` features, frequency average, then a Conformer
/// over time.
#[derive(Debug, Clone)]
pub struct AudioEncoder {
    /// Puts log-mel and intensity channels on a common scale.
    pub input_norm: BatchNorm,
    pub blocks: Vec<ResidualBlock>,
    pub conformer: ConformerStack,
    channels: usize,
    mel_bins: usize,
}

impl AudioEncoder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let input_norm = BatchNorm::new(init, cfg.feature_channels, 1);
        let mut cin = cfg.feature_channels;
        let blocks = cfg
            .cnn_channels
            .iter()
            .map(|&cout| {
                let b = ResidualBlock::new(init, cin, cout);
                cin = cout;
                b
            })
            .collect();
        Ok(Self {
            input_norm,
            blocks,
            conformer: ConformerStack::new(init, &cfg.conformer(cfg.embed_dim))?,
            channels: cfg.feature_channels,
            mel_bins: cfg.mel_bins,
        })
    }

    pub fn stride(&self) -> usize {
        1 << self.blocks.len()
    }

    /// Frequency-averaged CNN output `[B, T/stride, D]`.
    pub fn cnn(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let s = x.shape().to_vec();
        let stride = self.stride();
        if s.len() != 4 || s[1] != self.channels || s[3] != self.mel_bins {
            return Err(SeldError::shape(
                "audio_encoder",
                format!("features {s:?} must be [B, {}, T, {}]", self.channels, self.mel_bins),
            ));
        }
        if s[2] == 0 || s[2] % stride != 0 {
            return Err(SeldError::shape(
                "audio_encoder",
                format!("{} input frames not divisible by {stride}", s[2]),
            ));
        }
        let mut h = self.input_norm.forward(x, ctx)?;
        for b in &self.blocks {
            h = b.forward(&h, ctx)?;
        }
        h.mean_axis(3)?.permute(&[0, 2, 1])
    }

    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        let h = self.cnn(x, ctx)?;
        self.conformer.forward(&h, ctx)
    }
}

impl Module for AudioEncoder {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.input_norm.visit(&join(prefix, "input_norm"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), out);
        }
        self.conformer.visit(&join(prefix, "conformer"), out);
    }
}

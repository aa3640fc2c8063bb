use super::{ModelConfig, VisualEncoderKind};
use crate::augment::EquirectFrame;
use crate::autodiff::Var;
use crate::error::{Result, SeldError};
use crate::nn::{join, ConformerStack, Conv2d, Ctx, Init, Linear, Module, NamedTensor};

/// Per-half reduction of a frame to a vector.
#[derive(Debug, Clone)]
pub enum HalfEncoder {
    /// Fixed patch averaging followed by a shared linear projection.
    Patch { projection: Linear },
    /// 3×3 convolutions with ReLU and 2× pooling, then a global average.
    Cnn { convs: Vec<Conv2d> },
}

/// Splits each equirectangular frame into left and right squares, encodes
/// both with shared weights, and maps the concatenation to the model width.
#[derive(Debug, Clone)]
pub struct VisualEmbedder {
    pub kind: VisualEncoderKind,
    pub half: HalfEncoder,
    pub merge: Linear,
    pub conformer: ConformerStack,
    width: usize,
    height: usize,
    block: usize,
}

impl VisualEmbedder {
    pub fn new(init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let (half, half_dim, block) = match cfg.visual_encoder {
            VisualEncoderKind::PatchProjection => {
                let grid = cfg.frame_height / cfg.patch;
                let projection = Linear::new(init, 3 * grid * grid, cfg.embed_dim);
                (HalfEncoder::Patch { projection }, cfg.embed_dim, cfg.patch)
            }
            VisualEncoderKind::SplitPoolCnn => {
                let mut cin = 3;
                let convs = cfg
                    .visual_channels
                    .iter()
                    .map(|&c| {
                        let conv = Conv2d::new(init, cin, c, 3);
                        cin = c;
                        conv
                    })
                    .collect();
                (HalfEncoder::Cnn { convs }, cin, cfg.cnn_pool)
            }
        };
        Ok(Self {
            kind: cfg.visual_encoder,
            half,
            merge: Linear::new(init, 2 * half_dim, cfg.embed_dim),
            conformer: ConformerStack::new(init, &cfg.conformer(cfg.embed_dim))?,
            width: cfg.frame_width,
            height: cfg.frame_height,
            block,
        })
    }

    /// Per-frame input shape after [`Self::prepare`]: `[2, 3, S, S]`.
    pub fn frame_shape(&self) -> [usize; 4] {
        let s = self.height / self.block;
        [2, 3, s, s]
    }

    /// Block-averaged pixels scaled to [−1, 1], flattened as
    /// `[T, half, channel, row, col]`.
    pub fn prepare(&self, frames: &[EquirectFrame]) -> Result<Vec<f64>> {
        let k = self.block;
        let s = self.height / k;
        let norm = 2.0 / (255.0 * (k * k) as f64);
        let mut out = Vec::with_capacity(frames.len() * 6 * s * s);
        for (i, f) in frames.iter().enumerate() {
            if f.width != self.width || f.height != self.height {
                return Err(SeldError::Input(format!(
                    "frame {i} is {}x{}, expected {}x{}",
                    f.width, f.height, self.width, self.height
                )));
            }
            for half in 0..2 {
                let col0 = half * self.height;
                for c in 0..3 {
                    for r in 0..s {
                        for q in 0..s {
                            let mut acc = 0u32;
                            for dr in 0..k {
                                let row = (r * k + dr) * f.width;
                                for dq in 0..k {
                                    acc += u32::from(f.pixels[(row + col0 + q * k + dq) * 3 + c]);
                                }
                            }
                            out.push(f64::from(acc) * norm - 1.0);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Batch tensor `[B, T, 2, 3, S, S]` from per-example frame sequences.
    pub fn prepare_batch(&self, batch: &[Vec<EquirectFrame>]) -> Result<Var> {
        let t = batch.first().map_or(0, Vec::len);
        if batch.iter().any(|f| f.len() != t) {
            return Err(SeldError::Input("frame sequences differ in length".into()));
        }
        let mut data = Vec::new();
        for frames in batch {
            data.extend(self.prepare(frames)?);
        }
        let mut shape = vec![batch.len(), t];
        shape.extend(self.frame_shape());
        Var::constant(data, &shape)
    }

    /// Left and right half vectors `[B, T, 2, P]`.
    pub fn half_vectors(&self, x: &Var) -> Result<Var> {
        let s = x.shape().to_vec();
        if s.len() != 6 || s[2..] != self.frame_shape() {
            return Err(SeldError::shape(
                "visual_embedder",
                format!("prepared frames {s:?} must be [B, T, {:?}]", self.frame_shape()),
            ));
        }
        let (b, t, side) = (s[0], s[1], s[4]);
        match &self.half {
            HalfEncoder::Patch { projection } => projection.forward(&x.reshape(&[b, t, 2, 3 * side * side])?),
            HalfEncoder::Cnn { convs } => {
                let mut h = x.reshape(&[b * t * 2, 3, side, side])?;
                for conv in convs {
                    h = conv.forward(&h)?.relu().avg_pool2d(2, 2)?;
                }
                let c = h.shape()[1];
                h.mean_axis(3)?.mean_axis(2)?.reshape(&[b, t, 2, c])
            }
        }
    }

    /// Frame embeddings before the Conformer, `[B, T, D]`.
    pub fn embed(&self, x: &Var) -> Result<Var> {
        let halves = self.half_vectors(x)?;
        let s = halves.shape().to_vec();
        let h = self.merge.forward(&halves.reshape(&[s[0], s[1], 2 * s[3]])?)?;
        match self.half {
            HalfEncoder::Patch { .. } => Ok(h),
            HalfEncoder::Cnn { .. } => resample_time(&h),
        }
    }

    pub fn forward(&self, x: &Var, ctx: &mut Ctx) -> Result<Var> {
        self.conformer.forward(&self.embed(x)?, ctx)
    }
}

/// Pair-averaging in time followed by linear interpolation back to the
/// original rate, as one `[T, T]` map.
pub fn temporal_resampler(t: usize) -> Vec<f64> {
    let half = t.div_ceil(2);
    let mut pool = vec![0.0; half * t];
    for j in 0..half {
        let members: Vec<usize> = (2 * j..(2 * j + 2).min(t)).collect();
        for &m in &members {
            pool[j * t + m] = 1.0 / members.len() as f64;
        }
    }
    let mut out = vec![0.0; t * t];
    for i in 0..t {
        let pos = ((i as f64 - 0.5) / 2.0).clamp(0.0, (half - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(half - 1);
        let frac = pos - lo as f64;
        for m in 0..t {
            out[i * t + m] = (1.0 - frac) * pool[lo * t + m] + frac * pool[hi * t + m];
        }
    }
    out
}

fn resample_time(h: &Var) -> Result<Var> {
    let t = h.shape()[1];
    if t < 2 {
        return Ok(h.clone());
    }
    let map = Var::constant(temporal_resampler(t), &[t, t])?;
    // [B, T, D] -> [B, D, T] × mapᵀ -> [B, T, D]
    h.transpose(1, 2)?.matmul(&map.transpose(0, 1)?)?.transpose(1, 2)
}

impl Module for VisualEmbedder {
    fn visit(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        match &self.half {
            HalfEncoder::Patch { projection } => projection.visit(&join(prefix, "patch_projection"), out),
            HalfEncoder::Cnn { convs } => {
                for (i, c) in convs.iter().enumerate() {
                    c.visit(&join(prefix, &format!("convs.{i}")), out);
                }
            }
        }
        self.merge.visit(&join(prefix, "merge"), out);
        self.conformer.visit(&join(prefix, "conformer"), out);
    }
}

//! Eight-fold spatial augmentation applied consistently to FOA audio, DOA
//! labels and equirectangular video: azimuth rotations by multiples of 90°
//! combined with an optional elevation flip.

mod frame;

pub use frame::{
    dims_path, frame_file_name, load_frame_sequence, save_frame_sequence, EquirectFrame,
};

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, SeldError};
use crate::features::{FoaClip, SpectralFeatures, FEATURE_CHANNELS, W, X, Y, Z};
use crate::geometry::{wrap_azimuth, Doa};
use crate::labels::EventLabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AvcsTransform {
    /// Azimuth rotation in quarter turns, 0..=3.
    pub rotation_k: u8,
    pub elev_flip: bool,
}

impl AvcsTransform {
    pub const IDENTITY: AvcsTransform = AvcsTransform {
        rotation_k: 0,
        elev_flip: false,
    };

    pub fn new(rotation_k: u8, elev_flip: bool) -> Result<Self> {
        if rotation_k > 3 {
            return Err(SeldError::Input(format!("rotation {rotation_k} outside 0..=3")));
        }
        Ok(Self { rotation_k, elev_flip })
    }

    /// All eight transforms, identity first.
    pub fn all() -> [AvcsTransform; 8] {
        std::array::from_fn(|i| AvcsTransform {
            rotation_k: (i % 4) as u8,
            elev_flip: i >= 4,
        })
    }

    /// `self` applied after `first`.
    pub fn compose(self, first: AvcsTransform) -> AvcsTransform {
        AvcsTransform {
            rotation_k: (self.rotation_k + first.rotation_k) % 4,
            elev_flip: self.elev_flip ^ first.elev_flip,
        }
    }

    pub fn inverse(self) -> AvcsTransform {
        AvcsTransform {
            rotation_k: (4 - self.rotation_k) % 4,
            elev_flip: self.elev_flip,
        }
    }

    pub fn apply_doa(&self, doa: Doa) -> Doa {
        let el = if self.elev_flip { -doa.elevation } else { doa.elevation };
        Doa::new(wrap_azimuth(doa.azimuth + 90.0 * f64::from(self.rotation_k)), el)
    }
}

impl fmt::Display for AvcsTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.rotation_k, u8::from(self.elev_flip))
    }
}

/// Parses `k,flip` where flip is `0`/`1`/`true`/`false`.
impl FromStr for AvcsTransform {
    type Err = SeldError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SeldError::Input(format!("transform `{s}`: expected `k,flip`"));
        let (k, flip) = s.split_once(',').ok_or_else(bad)?;
        let k: u8 = k.trim().parse().map_err(|_| bad())?;
        let flip = match flip.trim() {
            "0" | "false" => false,
            "1" | "true" => true,
            _ => return Err(bad()),
        };
        AvcsTransform::new(k, flip)
    }
}

pub fn transform_labels(labels: &EventLabelSet, t: AvcsTransform) -> EventLabelSet {
    EventLabelSet {
        frames: labels
            .frames
            .iter()
            .map(|events| {
                events
                    .iter()
                    .map(|e| {
                        let mut e = *e;
                        e.doa = t.apply_doa(e.doa);
                        e
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Channel swaps and sign flips only; W is untouched.
pub fn transform_foa(clip: &FoaClip, t: AvcsTransform) -> FoaClip {
    let ch = clip.channels();
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
    let (x, y) = match t.rotation_k {
        0 => (ch[X].clone(), ch[Y].clone()),
        1 => (neg(&ch[Y]), ch[X].clone()),
        2 => (neg(&ch[X]), neg(&ch[Y])),
        _ => (ch[Y].clone(), neg(&ch[X])),
    };
    let z = if t.elev_flip { neg(&ch[Z]) } else { ch[Z].clone() };
    let mut out: [Vec<f64>; 4] = Default::default();
    out[W] = ch[W].clone();
    out[Y] = y;
    out[Z] = z;
    out[X] = x;
    FoaClip::new(out, clip.sample_rate).expect("same shape as a valid clip")
}

/// Applies `t` directly to extracted features. Log-mel powers ignore dipole
/// signs and intensity components follow the channel rule, so the result
/// matches extracting features from [`transform_foa`] of the source clip.
pub fn transform_features(feat: &SpectralFeatures, t: AvcsTransform) -> Result<SpectralFeatures> {
    if feat.channels != FEATURE_CHANNELS {
        return Err(SeldError::Input(format!(
            "expected {FEATURE_CHANNELS} feature channels, got {}",
            feat.channels
        )));
    }
    const IV_X: usize = 4;
    const IV_Y: usize = 5;
    const IV_Z: usize = 6;
    // (source channel, sign) per output channel
    let (x, y) = match t.rotation_k {
        0 => ((X, IV_X, 1.0), (Y, IV_Y, 1.0)),
        1 => ((Y, IV_Y, -1.0), (X, IV_X, 1.0)),
        2 => ((X, IV_X, -1.0), (Y, IV_Y, -1.0)),
        _ => ((Y, IV_Y, 1.0), (X, IV_X, -1.0)),
    };
    let z_sign = if t.elev_flip { -1.0 } else { 1.0 };
    let mut plan = [(0, 1.0); FEATURE_CHANNELS];
    plan[W] = (W, 1.0);
    plan[Y] = (y.0, 1.0);
    plan[Z] = (Z, 1.0);
    plan[X] = (x.0, 1.0);
    plan[IV_X] = (x.1, x.2);
    plan[IV_Y] = (y.1, y.2);
    plan[IV_Z] = (IV_Z, z_sign);
    let mut data = Vec::with_capacity(feat.data.len());
    for (src, sign) in plan {
        data.extend(feat.channel(src).iter().map(|v| if sign < 0.0 { -v } else { *v }));
    }
    Ok(SpectralFeatures {
        channels: feat.channels,
        frames: feat.frames,
        mel_bins: feat.mel_bins,
        data,
    })
}

/// Circular column shift by a quarter width per rotation step, plus a
/// vertical flip.
pub fn transform_frame(frame: &EquirectFrame, t: AvcsTransform) -> Result<EquirectFrame> {
    let (w, h) = (frame.width, frame.height);
    if w != 2 * h || w % 4 != 0 {
        return Err(SeldError::Input(format!(
            "frame {w}x{h} must be 2:1 with width divisible by 4"
        )));
    }
    let shift = usize::from(t.rotation_k) * w / 4;
    let mut out = vec![0u8; frame.pixels.len()];
    for row in 0..h {
        let src_row = if t.elev_flip { h - 1 - row } else { row };
        let src = &frame.pixels[src_row * w * 3..(src_row + 1) * w * 3];
        let dst = &mut out[row * w * 3..(row + 1) * w * 3];
        // dst[col] = src[col - shift]
        dst[shift * 3..].copy_from_slice(&src[..(w - shift) * 3]);
        dst[..shift * 3].copy_from_slice(&src[(w - shift) * 3..]);
    }
    EquirectFrame::new(w, h, out)
}

/// One training example across modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct AvExample {
    pub audio: FoaClip,
    pub labels: EventLabelSet,
    pub frames: Vec<EquirectFrame>,
}

pub fn augment_example(example: &AvExample, t: AvcsTransform) -> Result<AvExample> {
    Ok(AvExample {
        audio: transform_foa(&example.audio, t),
        labels: transform_labels(&example.labels, t),
        frames: example
            .frames
            .iter()
            .map(|f| transform_frame(f, t))
            .collect::<Result<_>>()?,
    })
}

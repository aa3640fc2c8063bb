//! FOA audio to the 7-channel log-mel + intensity-vector input tensor.
//!
//! Channel convention throughout is ACN/SN3D: `W, Y, Z, X`. A plane wave
//! with signal `s` from azimuth φ and elevation θ encodes as
//! `W = s, Y = s·sinφ·cosθ, Z = s·sinθ, X = s·cosφ·cosθ`.

mod mel;
mod stft;
mod wav;

use std::fs;
use std::path::Path;

pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use stft::{frame_count, hann, stft, Spectrogram};
pub use wav::{read_wav, write_wav};

use crate::error::{Result, SeldError};
use crate::geometry::Doa;

/// ACN channel indices.
pub const W: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;
pub const X: usize = 3;

/// Channels in the feature tensor: 4 log-mel + 3 intensity components.
pub const FEATURE_CHANNELS: usize = 7;

/// 4-channel first-order ambisonic waveform in ACN order.
#[derive(Debug, Clone, PartialEq)]
pub struct FoaClip {
    channels: [Vec<f64>; 4],
    pub sample_rate: u32,
}

impl FoaClip {
    pub fn new(channels: [Vec<f64>; 4], sample_rate: u32) -> Result<Self> {
        let clip = Self {
            channels,
            sample_rate,
        };
        clip.validate()?;
        Ok(clip)
    }

    /// Silent clip of `samples` samples.
    pub fn silent(samples: usize, sample_rate: u32) -> Self {
        Self {
            channels: std::array::from_fn(|_| vec![0.0; samples]),
            sample_rate,
        }
    }

    /// Encodes a mono signal as a plane wave from `doa`.
    pub fn plane_wave(signal: &[f64], doa: Doa, sample_rate: u32) -> Result<Self> {
        let [x, y, z] = doa.unit_vector();
        let ch = |g: f64| signal.iter().map(|s| s * g).collect::<Vec<_>>();
        Self::new([signal.to_vec(), ch(y), ch(z), ch(x)], sample_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels[0].len();
        if n == 0 {
            return Err(SeldError::Input("empty FOA clip".into()));
        }
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(SeldError::Input("FOA channels differ in length".into()));
        }
        if self.channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SeldError::Input("non-finite sample in FOA clip".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[Vec<f64>; 4] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn channels_mut(&mut self) -> &mut [Vec<f64>; 4] {
        &mut self.channels
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    /// Samples `[start, end)`; the range is clamped to the clip and zero
    /// padded up to `end - start` samples.
    pub fn segment(&self, start: usize, end: usize) -> FoaClip {
        let channels = std::array::from_fn(|c| {
            let src = &self.channels[c];
            (start..end).map(|i| src.get(i).copied().unwrap_or(0.0)).collect()
        });
        FoaClip {
            channels,
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, c: f64) -> FoaClip {
        FoaClip {
            channels: std::array::from_fn(|i| self.channels[i].iter().map(|v| v * c).collect()),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub sample_rate: u32,
    /// Hann window length, also the FFT size.
    pub window: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Added to the intensity-vector normaliser.
    pub iv_eps: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            window: 512,
            hop: 150,
            mel_bins: 128,
            fmin: 20.0,
            fmax: 12_000.0,
            log_floor: 1e-10,
            iv_eps: 1e-8,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window {
            return Err(SeldError::Config(format!("hop {} must be in 1..={}", self.hop, self.window)));
        }
        if self.mel_bins == 0 {
            return Err(SeldError::Config("mel_bins must be positive".into()));
        }
        if !(0.0 <= self.fmin && self.fmin < self.fmax && self.fmax <= f64::from(self.sample_rate) / 2.0) {
            return Err(SeldError::Config(format!("mel range {}..{} Hz invalid", self.fmin, self.fmax)));
        }
        if !(self.log_floor > 0.0 && self.iv_eps > 0.0) {
            return Err(SeldError::Config("log_floor and iv_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.window / 2 + 1
    }

    pub fn frames_per_second(&self) -> f64 {
        f64::from(self.sample_rate) / self.hop as f64
    }

    pub fn filterbank(&self) -> MelFilterbank {
        MelFilterbank::new(self.mel_bins, self.window, f64::from(self.sample_rate), self.fmin, self.fmax)
    }
}

/// `[channel][frame][mel]` feature tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFeatures {
    pub channels: usize,
    pub frames: usize,
    pub mel_bins: usize,
    pub data: Vec<f64>,
}

impl SpectralFeatures {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.frames, self.mel_bins)
    }

    pub fn at(&self, c: usize, t: usize, m: usize) -> f64 {
        self.data[(c * self.frames + t) * self.mel_bins + m]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.frames * self.mel_bins;
        &self.data[c * n..(c + 1) * n]
    }

    /// Frames `[start, start + len)`.
    pub fn frames_slice(&self, start: usize, len: usize) -> Result<SpectralFeatures> {
        if start + len > self.frames {
            return Err(SeldError::shape("features", format!("frames {start}..{} of {}", start + len, self.frames)));
        }
        let mut data = Vec::with_capacity(self.channels * len * self.mel_bins);
        for c in 0..self.channels {
            let base = (c * self.frames + start) * self.mel_bins;
            data.extend_from_slice(&self.data[base..base + len * self.mel_bins]);
        }
        Ok(SpectralFeatures {
            channels: self.channels,
            frames: len,
            mel_bins: self.mel_bins,
            data,
        })
    }

    /// Flat little-endian dump: `u32 frames, u32 mel_bins` header followed by
    /// `7 × frames × mel_bins` f32 values, row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.mel_bins as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(SeldError::Input("feature file shorter than its header".into()));
        }
        let frames = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
        let mel_bins = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let n = FEATURE_CHANNELS * frames * mel_bins;
        if bytes.len() != 8 + 4 * n {
            return Err(SeldError::Input(format!(
                "feature payload is {} bytes, header implies {}",
                bytes.len() - 8,
                4 * n
            )));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        Ok(Self {
            channels: FEATURE_CHANNELS,
            frames,
            mel_bins,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| SeldError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SeldError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_spec(spec: &Spectrogram, cfg: &StftConfig, op: &'static str) -> Result<()> {
    if spec.bins != cfg.bins() || spec.channels != 4 {
        return Err(SeldError::shape(
            op,
            format!("{} channels × {} bins, expected 4 × {}", spec.channels, spec.bins, cfg.bins()),
        ));
    }
    Ok(())
}

/// Natural-log mel power spectra, `[4][frame][mel]`.
pub fn logmel(spec: &Spectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    check_spec(spec, cfg, "logmel")?;
    let fb = cfg.filterbank();
    let mut out = vec![0.0; 4 * spec.frames * cfg.mel_bins];
    let mut power = vec![0.0; spec.bins];
    for ch in 0..4 {
        for t in 0..spec.frames {
            for (p, c) in power.iter_mut().zip(spec.frame(ch, t)) {
                *p = c.norm_sqr();
            }
            let dst = &mut out[(ch * spec.frames + t) * cfg.mel_bins..][..cfg.mel_bins];
            fb.apply(&power, dst);
            for v in dst.iter_mut() {
                *v = (*v + cfg.log_floor).ln();
            }
        }
    }
    Ok(out)
}

/// Normalised active intensity per TF bin, averaged within each mel band,
/// `[3][frame][mel]` in `x, y, z` order.
pub fn intensity_vectors(spec: &Spectrogram, cfg: &StftConfig) -> Result<Vec<f64>> {
    check_spec(spec, cfg, "intensity_vectors")?;
    let fb = cfg.filterbank();
    let (frames, bins, mels) = (spec.frames, spec.bins, cfg.mel_bins);
    let mut out = vec![0.0; 3 * frames * mels];
    let mut comp = [vec![0.0; bins], vec![0.0; bins], vec![0.0; bins]];
    let mut band = vec![0.0; mels];
    for t in 0..frames {
        let (w, y, z, x) = (spec.frame(W, t), spec.frame(Y, t), spec.frame(Z, t), spec.frame(X, t));
        for k in 0..bins {
            let denom = w[k].norm_sqr()
                + (x[k].norm_sqr() + y[k].norm_sqr() + z[k].norm_sqr()) / 3.0
                + cfg.iv_eps;
            let wc = w[k].conj();
            comp[0][k] = (wc * x[k]).re / denom;
            comp[1][k] = (wc * y[k]).re / denom;
            comp[2][k] = (wc * z[k]).re / denom;
        }
        for (axis, c) in comp.iter().enumerate() {
            fb.apply_mean(c, &mut band);
            let dst = &mut out[(axis * frames + t) * mels..][..mels];
            for (d, &v) in dst.iter_mut().zip(&band) {
                *d = v.clamp(-1.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Full 7-channel feature tensor for a clip.
pub fn extract_features(clip: &FoaClip, cfg: &StftConfig) -> Result<SpectralFeatures> {
    let spec = stft(clip, cfg)?;
    let mut data = logmel(&spec, cfg)?;
    data.extend(intensity_vectors(&spec, cfg)?);
    Ok(SpectralFeatures {
        channels: FEATURE_CHANNELS,
        frames: spec.frames,
        mel_bins: cfg.mel_bins,
        data,
    })
}

/// Direction of the energy-weighted mean intensity vector over frames
/// `[start, end)`, using the omni log-mel channel as weight.
pub fn estimate_doa(feat: &SpectralFeatures, start: usize, end: usize) -> Option<Doa> {
    let mut acc = [0.0; 3];
    for t in start..end.min(feat.frames) {
        for m in 0..feat.mel_bins {
            let weight = feat.at(W, t, m).exp();
            for (axis, a) in acc.iter_mut().enumerate() {
                *a += weight * feat.at(4 + axis, t, m);
            }
        }
    }
    Doa::from_vector(acc)
}

/// Direction of the summed raw intensity `Re(W*·[X, Y, Z])` over all bins.
pub fn estimate_doa_spectrogram(spec: &Spectrogram) -> Option<Doa> {
    let mut acc = [0.0; 3];
    for t in 0..spec.frames {
        for k in 0..spec.bins {
            let wc = spec.at(W, t, k).conj();
            acc[0] += (wc * spec.at(X, t, k)).re;
            acc[1] += (wc * spec.at(Y, t, k)).re;
            acc[2] += (wc * spec.at(Z, t, k)).re;
        }
    }
    Doa::from_vector(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_nonfinite_clips_rejected() {
        assert!(FoaClip::new([vec![], vec![], vec![], vec![]], 24_000).is_err());
        let mut ch: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; 10]);
        ch[2][3] = f64::NAN;
        assert!(matches!(FoaClip::new(ch, 24_000), Err(SeldError::Input(_))));
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::default().validate().is_ok());
        assert_eq!(StftConfig::default().frames_per_second(), 160.0);
        let bad = StftConfig {
            hop: 600,
            ..StftConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bin_count_mismatch_is_shape_error() {
        let spec = Spectrogram {
            channels: 4,
            frames: 1,
            bins: 10,
            data: vec![Default::default(); 40],
        };
        let err = logmel(&spec, &StftConfig::default()).unwrap_err();
        assert!(matches!(err, SeldError::Shape { op: "logmel", .. }));
    }

    #[test]
    fn feature_bytes_round_trip() {
        let feat = SpectralFeatures {
            channels: 7,
            frames: 2,
            mel_bins: 3,
            data: (0..42).map(|i| i as f64 * 0.5).collect(),
        };
        let bytes = feat.to_bytes();
        assert_eq!(bytes.len(), 8 + 42 * 4);
        assert_eq!(&bytes[..8], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(SpectralFeatures::from_bytes(&bytes).unwrap(), feat);
        assert!(SpectralFeatures::from_bytes(&bytes[..20]).is_err());
    }
}

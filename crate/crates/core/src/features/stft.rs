use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{FoaClip, StftConfig};
use crate::error::Result;

/// Complex one-sided spectra, `[channel][frame][bin]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub channels: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn at(&self, ch: usize, t: usize, k: usize) -> Complex64 {
        self.data[(ch * self.frames + t) * self.bins + k]
    }

    pub fn frame(&self, ch: usize, t: usize) -> &[Complex64] {
        let start = (ch * self.frames + t) * self.bins;
        &self.data[start..start + self.bins]
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Number of frames for `samples` input: one frame per started hop.
pub fn frame_count(samples: usize, hop: usize) -> usize {
    samples.div_ceil(hop)
}

/// Index into a signal of length `n` under repeated mirror reflection
/// (edge sample not repeated).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Short-time Fourier transform of every FOA channel.
///
/// Frame `t` is centred on the middle of hop block `t`, i.e. it covers
/// samples `[t·hop − (win−hop)/2, t·hop − (win−hop)/2 + win)` with reflected
/// padding outside the clip, so the frame count is `ceil(S / hop)`.
pub fn stft(clip: &FoaClip, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    clip.validate()?;
    let n = clip.len();
    let win = cfg.window;
    let bins = cfg.bins();
    let frames = frame_count(n, cfg.hop);
    let window = hann(win);
    let lead = ((win - cfg.hop) / 2) as isize;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);
    let mut buf = vec![Complex64::new(0.0, 0.0); win];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(4 * frames * bins);
    for ch in clip.channels() {
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - lead;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = start + j as isize;
                let s = if idx >= 0 && (idx as usize) < n {
                    ch[idx as usize]
                } else {
                    ch[reflect(idx, n)]
                };
                *slot = Complex64::new(s * window[j], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
    }
    Ok(Spectrogram {
        channels: 4,
        frames,
        bins,
        data,
    })
}

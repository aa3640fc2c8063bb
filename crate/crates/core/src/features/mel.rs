/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with unit peak, `bands × bins` row-major, evenly
/// spaced on the mel scale between `fmin` and `fmax`. A band whose triangle
/// contains no FFT bin takes the bin nearest its centre with weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub bands: usize,
    pub bins: usize,
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize, n_fft: usize, sample_rate: f64, fmin: f64, fmax: f64) -> Self {
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let mut weights = vec![0.0; bands * bins];
        for m in 0..bands {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * sample_rate / n_fft as f64;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                if w > 0.0 {
                    weights[m * bins + k] = w;
                }
            }
            // narrow low-frequency triangles can fall between FFT bins
            if weights[m * bins..(m + 1) * bins].iter().all(|&w| w == 0.0) {
                let k = ((c * n_fft as f64 / sample_rate).round() as usize).min(bins - 1);
                weights[m * bins + k] = 1.0;
            }
        }
        Self {
            bands,
            bins,
            weights,
        }
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Weighted sum per band.
    pub fn apply(&self, spectrum: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate().take(self.bands) {
            *o = self.row(m).iter().zip(spectrum).map(|(w, s)| w * s).sum();
        }
    }

    /// Weighted mean per band; bands with no support give zero.
    pub fn apply_mean(&self, spectrum: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate().take(self.bands) {
            let row = self.row(m);
            let norm: f64 = row.iter().sum();
            *o = if norm > 0.0 {
                row.iter().zip(spectrum).map(|(w, s)| w * s).sum::<f64>() / norm
            } else {
                0.0
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 20.0, 1000.0, 12_000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn every_band_has_support() {
        let fb = MelFilterbank::new(128, 512, 24_000.0, 20.0, 12_000.0);
        for m in 0..128 {
            assert!(fb.row(m).iter().sum::<f64>() > 0.0, "band {m} empty");
            assert!(fb.row(m).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }
}

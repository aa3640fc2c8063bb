use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::FoaClip;
use crate::error::{Result, SeldError};

/// Reads a 4-channel PCM-16 or float-32 WAV file.
pub fn read_wav(path: &Path) -> Result<FoaClip> {
    let mut reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => SeldError::io(path, io),
        e => SeldError::format(path, e.to_string()),
    })?;
    let spec = reader.spec();
    if spec.channels != 4 {
        return Err(SeldError::Input(format!(
            "{}: expected 4 FOA channels, found {}",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(SeldError::format(
                path,
                format!("unsupported sample format {fmt:?}/{bits} bit"),
            ))
        }
    }
    .map_err(|e| SeldError::format(path, e.to_string()))?;
    let frames = interleaved.len() / 4;
    let mut channels: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(frames));
    for frame in interleaved.chunks_exact(4) {
        for (c, &v) in frame.iter().enumerate() {
            channels[c].push(v);
        }
    }
    FoaClip::new(channels, spec.sample_rate)
}

/// Writes a clip as 4-channel float-32 WAV.
pub fn write_wav(path: &Path, clip: &FoaClip) -> Result<()> {
    let spec = WavSpec {
        channels: 4,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let err = |e: hound::Error| SeldError::format(path, e.to_string());
    let mut w = WavWriter::create(path, spec).map_err(err)?;
    for i in 0..clip.len() {
        for c in 0..4 {
            w.write_sample(clip.channel(c)[i] as f32).map_err(err)?;
        }
    }
    w.finalize().map_err(err)
}

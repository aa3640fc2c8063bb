use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::DataConfig;
use crate::augment::{
    load_frame_sequence, save_frame_sequence, transform_features, transform_frame, transform_labels, AvcsTransform, EquirectFrame,
};
use crate::error::{Result, SeldError};
use crate::features::{extract_features, read_wav, write_wav, SpectralFeatures, StftConfig};
use crate::labels::{read_label_csv, write_label_csv, EventLabelSet, LABEL_RATE};
use crate::synth::Scene;

/// One recording with its features, video frames and labels, all on the
/// label-frame clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub name: String,
    pub features: SpectralFeatures,
    /// Empty for audio-only data.
    pub frames: Vec<EquirectFrame>,
    pub labels: EventLabelSet,
}

impl Clip {
    pub fn label_frames(&self) -> usize {
        self.labels.num_frames()
    }

    pub fn from_scene(name: &str, scene: &Scene, stft: &StftConfig) -> Result<Clip> {
        Clip::new(name, extract_features(&scene.audio, stft)?, scene.frames.clone(), scene.labels.clone(), stft)
    }

    /// Extends the labels to the audio duration.
    pub fn new(
        name: &str,
        features: SpectralFeatures,
        frames: Vec<EquirectFrame>,
        mut labels: EventLabelSet,
        stft: &StftConfig,
    ) -> Result<Clip> {
        let ratio = feature_ratio(stft)?;
        let frames_from_audio = features.frames.div_ceil(ratio);
        labels.extend_to(frames_from_audio);
        let clip = Clip {
            name: name.to_string(),
            features,
            frames,
            labels,
        };
        if !clip.frames.is_empty() && clip.frames.len() < clip.label_frames() {
            return Err(SeldError::Input(format!(
                "clip `{name}` has {} video frames for {} label frames",
                clip.frames.len(),
                clip.label_frames()
            )));
        }
        Ok(clip)
    }
}

/// Feature frames per label frame.
pub fn feature_ratio(stft: &StftConfig) -> Result<usize> {
    let r = stft.frames_per_second() / LABEL_RATE;
    if (r - r.round()).abs() > 1e-9 || r < 1.0 {
        return Err(SeldError::Config(format!(
            "feature rate {} Hz is not a multiple of the label rate",
            stft.frames_per_second()
        )));
    }
    Ok(r.round() as usize)
}

/// Cached features next to a clip, `<stem>.feat`.
pub fn feature_cache_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.feat"))
}

pub fn frames_dir(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}_frames"))
}

/// Writes `<stem>.wav`, `<stem>.csv`, `<stem>.ini` and the frames as
/// `<stem>_frames/*.<ext>`; [`load_clip`] reads the same layout.
pub fn write_scene(dir: &Path, stem: &str, scene: &Scene, ext: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SeldError::io(dir, e))?;
    write_wav(&dir.join(format!("{stem}.wav")), &scene.audio)?;
    write_label_csv(&dir.join(format!("{stem}.csv")), &scene.labels)?;
    scene.spec.save(&dir.join(format!("{stem}.ini")))?;
    save_frame_sequence(&frames_dir(dir, stem), &scene.frames, ext)
}

/// Loads `<stem>.wav` (or its `.feat` cache), `<stem>.csv` and, when
/// `with_frames`, the `<stem>_frames/` sequence.
pub fn load_clip(dir: &Path, stem: &str, stft: &StftConfig, with_frames: bool) -> Result<Clip> {
    let cache = feature_cache_path(dir, stem);
    let features = match cache.exists() {
        true => {
            let f = SpectralFeatures::load(&cache)?;
            if f.mel_bins != stft.mel_bins {
                return Err(SeldError::format(
                    &cache,
                    format!("{} mel bins, expected {}", f.mel_bins, stft.mel_bins),
                ));
            }
            f
        }
        false => extract_features(&read_wav(&dir.join(format!("{stem}.wav")))?, stft)?,
    };
    let labels = read_label_csv(&dir.join(format!("{stem}.csv")))?;
    let frames = if with_frames {
        load_frame_sequence(&frames_dir(dir, stem))?
    } else {
        Vec::new()
    };
    Clip::new(stem, features, frames, labels, stft)
}

/// Every clip in `dir`, identified by its label CSV, in name order.
pub fn load_clips(dir: &Path, stft: &StftConfig, with_frames: bool) -> Result<Vec<Clip>> {
    let entries = fs::read_dir(dir).map_err(|e| SeldError::io(dir, e))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| SeldError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(SeldError::Input(format!("no labelled clips in {}", dir.display())));
    }
    stems.iter().map(|s| load_clip(dir, s, stft, with_frames)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChunkMode {
    /// Windows fully inside the clip at the training hop.
    Train,
    /// Windows at the test hop covering every label frame; the last one is
    /// zero-padded.
    Test,
}

/// Position of one example: clip index, first label frame and transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkRef {
    pub clip: usize,
    pub start: usize,
    pub transform: AvcsTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: ChunkRef,
    pub features: SpectralFeatures,
    pub frames: Vec<EquirectFrame>,
    pub labels: EventLabelSet,
}

/// Window start frames for a clip of `len` label frames.
pub fn chunk_starts(len: usize, chunk: usize, hop: usize, mode: ChunkMode) -> Vec<usize> {
    if len < chunk || chunk == 0 || hop == 0 {
        return Vec::new();
    }
    match mode {
        ChunkMode::Train => (0..=len - chunk).step_by(hop).collect(),
        ChunkMode::Test => (0..len).step_by(hop).collect(),
    }
}

/// Enumerates examples without materialising them. With `avcs` each window
/// appears once per transform, identity first.
pub fn chunk_index(clips: &[Clip], cfg: &DataConfig, mode: ChunkMode, avcs: bool) -> Vec<ChunkRef> {
    let chunk = cfg.chunk_frames();
    let hop = match mode {
        ChunkMode::Train => cfg.train_hop,
        ChunkMode::Test => cfg.test_hop,
    };
    let hop = (hop * LABEL_RATE).round() as usize;
    let transforms: Vec<AvcsTransform> = if avcs {
        AvcsTransform::all().to_vec()
    } else {
        vec![AvcsTransform::IDENTITY]
    };
    let mut out = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        let starts = chunk_starts(clip.label_frames(), chunk, hop, mode);
        if starts.is_empty() {
            warn!(
                "skipping clip `{}`: {} label frames is shorter than the {chunk}-frame chunk",
                clip.name,
                clip.label_frames()
            );
        }
        for start in starts {
            for &transform in &transforms {
                out.push(ChunkRef { clip: i, start, transform });
            }
        }
    }
    out
}

/// Cuts one example, zero-padding features and video past the clip end.
pub fn materialize(clips: &[Clip], r: ChunkRef, chunk: usize, stft: &StftConfig) -> Result<Example> {
    let clip = clips
        .get(r.clip)
        .ok_or_else(|| SeldError::Input(format!("chunk refers to clip {} of {}", r.clip, clips.len())))?;
    let ratio = feature_ratio(stft)?;
    let f = &clip.features;
    let (first, len) = (r.start * ratio, chunk * ratio);
    let mut data = vec![0.0; f.channels * len * f.mel_bins];
    let lo = first.min(f.frames);
    let hi = (first + len).min(f.frames);
    for c in 0..f.channels {
        let src = &f.channel(c)[lo * f.mel_bins..hi * f.mel_bins];
        data[c * len * f.mel_bins..][..src.len()].copy_from_slice(src);
    }
    let features = SpectralFeatures {
        channels: f.channels,
        frames: len,
        mel_bins: f.mel_bins,
        data,
    };
    let mut frames = Vec::new();
    if let Some(first_frame) = clip.frames.first() {
        for t in r.start..r.start + chunk {
            let frame = match clip.frames.get(t) {
                Some(fr) => transform_frame(fr, r.transform)?,
                None => EquirectFrame::filled(first_frame.width, first_frame.height, [0, 0, 0])?,
            };
            frames.push(frame);
        }
    }
    Ok(Example {
        source: r,
        features: transform_features(&features, r.transform)?,
        frames,
        labels: transform_labels(&clip.labels.window(r.start, chunk), r.transform),
    })
}

/// Materialises `refs` on up to `workers` threads; output order follows
/// `refs` regardless of scheduling.
pub fn materialize_all(
    clips: &[Clip],
    refs: &[ChunkRef],
    chunk: usize,
    stft: &StftConfig,
    workers: usize,
) -> Result<Vec<Example>> {
    let workers = match workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(refs.len())
    .max(1);
    if workers == 1 {
        return refs.iter().map(|&r| materialize(clips, r, chunk, stft)).collect();
    }
    let per = refs.len().div_ceil(workers);
    let parts: Vec<Result<Vec<Example>>> = std::thread::scope(|s| {
        let handles: Vec<_> = refs
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(|&r| materialize(clips, r, chunk, stft)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("chunk worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(refs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// All examples of `clips` for `mode`, eight per window when `avcs` is set.
pub fn chunk_dataset(
    clips: &[Clip],
    cfg: &DataConfig,
    mode: ChunkMode,
    avcs: bool,
    stft: &StftConfig,
) -> Result<Vec<Example>> {
    let refs = chunk_index(clips, cfg, mode, avcs);
    materialize_all(clips, &refs, cfg.chunk_frames(), stft, cfg.workers)
}

use std::f64::consts::PI;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{ScenarioSpec, SceneEvent, SAMPLE_RATE};
use crate::augment::EquirectFrame;
use crate::error::Result;
use crate::features::{FoaClip, W, X, Y, Z};
use crate::geometry::Doa;
use crate::labels::{Event, EventLabelSet, LABEL_RATE};

/// Video frames per second; one frame per label frame.
pub const FRAME_RATE: f64 = LABEL_RATE;
pub const BLOB_SIGMA: f64 = 6.0;
pub const BACKGROUND: [u8; 3] = [128, 128, 128];
const BANDWIDTH: f64 = 100.0;

/// Centre frequency of a class's noise band.
pub fn class_frequency(class: usize) -> f64 {
    300.0 * (class + 1) as f64
}

/// Fully saturated colour with hue spread evenly over the classes.
pub fn class_color(class: usize) -> [u8; 3] {
    let h = class as f64 / crate::labels::NUM_CLASSES as f64 * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|v: f64| (v * 255.0).round() as u8)
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// First sample index at or after time `t`.
fn sample_at(t: f64) -> usize {
    (t * f64::from(SAMPLE_RATE) - 1e-6).ceil().max(0.0) as usize
}

/// Amplitude-modulated band-limited Gaussian noise over the event's active
/// samples, scaled to unit mean power.
fn event_source(spec: &ScenarioSpec, index: usize, e: &SceneEvent) -> (usize, Vec<f64>) {
    let (start, end) = (sample_at(e.onset), sample_at(e.offset).min(spec.num_samples()));
    let len = end.saturating_sub(start);
    if len == 0 {
        return (start, Vec::new());
    }
    let mut rng = StdRng::seed_from_u64(stream_seed(spec.seed, index as u64 + 1));
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let sr = f64::from(SAMPLE_RATE);
    let fc = class_frequency(e.class);
    for (k, v) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * sr / len as f64;
        if (f - fc).abs() > BANDWIDTH / 2.0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let rate = rng.gen_range(2.0..6.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut s: Vec<f64> = buf
        .iter()
        .enumerate()
        .map(|(i, c)| c.re * (1.0 + 0.5 * (2.0 * PI * rate * i as f64 / sr + phase).sin()))
        .collect();
    let power = s.iter().map(|v| v * v).sum::<f64>() / len as f64;
    if power > 0.0 {
        let g = power.sqrt().recip();
        s.iter_mut().for_each(|v| *v *= g);
    }
    (start, s)
}

/// Clean event mixture and diffuse noise, kept apart for SNR measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioParts {
    pub clean: FoaClip,
    pub noise: FoaClip,
}

/// Each event has unit power on W; the noise has power `10^(−snr/10)` on W
/// and a third of that on each of X, Y and Z, as for an isotropic field.
pub fn render_audio_parts(spec: &ScenarioSpec) -> Result<AudioParts> {
    spec.validate()?;
    let n = spec.num_samples();
    let sr = f64::from(SAMPLE_RATE);
    let mut clean = FoaClip::silent(n, SAMPLE_RATE);
    let ch = clean.channels_mut();
    for (i, e) in spec.events.iter().enumerate() {
        let (start, src) = event_source(spec, i, e);
        let el = e.elevation.to_radians();
        for (j, s) in src.iter().enumerate() {
            let idx = start + j;
            let az = e.azimuth_at(idx as f64 / sr).to_radians();
            ch[W][idx] += s;
            ch[X][idx] += s * az.cos() * el.cos();
            ch[Y][idx] += s * az.sin() * el.cos();
            ch[Z][idx] += s * el.sin();
        }
    }
    let sigma = 10f64.powf(-spec.snr_db / 20.0);
    let mut rng = StdRng::seed_from_u64(stream_seed(spec.seed, 0));
    let mut noise = FoaClip::silent(n, SAMPLE_RATE);
    for (c, chan) in noise.channels_mut().iter_mut().enumerate() {
        let s = if c == W { sigma } else { sigma / 3f64.sqrt() };
        chan.iter_mut().for_each(|v| *v = s * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(AudioParts { clean, noise })
}

pub fn render_audio(spec: &ScenarioSpec) -> Result<FoaClip> {
    let AudioParts { mut clean, noise } = render_audio_parts(spec)?;
    for (c, nz) in clean.channels_mut().iter_mut().zip(noise.channels()) {
        c.iter_mut().zip(nz).for_each(|(a, b)| *a += b);
    }
    Ok(clean)
}

/// Centre time of label frame `k`.
fn frame_time(k: usize) -> f64 {
    (k as f64 + 0.5) / LABEL_RATE
}

/// Labels frame `k` with every event active at the frame's centre time,
/// onset and offset inclusive. Source ids are event indices.
pub fn render_labels(spec: &ScenarioSpec) -> Result<EventLabelSet> {
    spec.validate()?;
    let mut labels = EventLabelSet::empty(spec.num_label_frames());
    for k in 0..labels.num_frames() {
        let t = frame_time(k);
        for (i, e) in spec.events.iter().enumerate() {
            if e.onset <= t && t <= e.offset {
                labels.frames[k].push(Event {
                    class: e.class,
                    source: i as u32,
                    doa: Doa::new(e.azimuth_at(t), e.elevation),
                });
            }
        }
    }
    Ok(labels)
}

fn draw_blob(frame: &mut EquirectFrame, doa: &Doa, color: [u8; 3]) {
    let (w, h) = (frame.width as i64, frame.height as i64);
    let (cx, cy) = frame.doa_to_pixel(doa);
    let reach = (4.0 * BLOB_SIGMA).ceil() as i64;
    let (col0, row0) = (cx.floor() as i64, cy.floor() as i64);
    for row in (row0 - reach).max(0)..=(row0 + reach).min(h - 1) {
        let dy = row as f64 + 0.5 - cy;
        for dc in -reach..=reach {
            let col = (col0 + dc).rem_euclid(w);
            let mut dx = col as f64 + 0.5 - cx;
            dx -= (dx / w as f64).round() * w as f64;
            let a = (-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
            let p = frame.pixel(row as usize, col as usize);
            let mixed: [u8; 3] = std::array::from_fn(|i| {
                (f64::from(p[i]) * (1.0 - a) + f64::from(color[i]) * a).round() as u8
            });
            frame.set_pixel(row as usize, col as usize, mixed);
        }
    }
}

/// One frame per label frame showing a Gaussian blob per labelled event.
pub fn render_frames(spec: &ScenarioSpec) -> Result<Vec<EquirectFrame>> {
    let labels = render_labels(spec)?;
    labels
        .frames
        .iter()
        .map(|events| {
            let mut f = EquirectFrame::filled(spec.frame_width, spec.frame_height, BACKGROUND)?;
            for e in events {
                draw_blob(&mut f, &e.doa, class_color(e.class));
            }
            Ok(f)
        })
        .collect()
}

/// Deviation-weighted centroid `(x, y)` in continuous pixel coordinates,
/// using a circular mean horizontally. `None` for a blank frame.
pub fn blob_centroid(frame: &EquirectFrame, background: [u8; 3]) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut sr, mut total) = (0.0, 0.0, 0.0, 0.0);
    for row in 0..frame.height {
        for col in 0..frame.width {
            let p = frame.pixel(row, col);
            let wgt: f64 = (0..3).map(|i| (f64::from(p[i]) - f64::from(background[i])).abs()).sum();
            if wgt == 0.0 {
                continue;
            }
            let ang = 2.0 * PI * (col as f64 + 0.5) / frame.width as f64;
            sx += wgt * ang.cos();
            sy += wgt * ang.sin();
            sr += wgt * (row as f64 + 0.5);
            total += wgt;
        }
    }
    if total == 0.0 {
        return None;
    }
    let x = sy.atan2(sx).rem_euclid(2.0 * PI) / (2.0 * PI) * frame.width as f64;
    Some((x, sr / total))
}

/// A fully rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: ScenarioSpec,
    pub audio: FoaClip,
    pub frames: Vec<EquirectFrame>,
    pub labels: EventLabelSet,
}

pub fn render_scene(spec: &ScenarioSpec) -> Result<Scene> {
    Ok(Scene {
        spec: spec.clone(),
        audio: render_audio(spec)?,
        frames: render_frames(spec)?,
        labels: render_labels(spec)?,
    })
}

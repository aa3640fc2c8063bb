//! Seeded synthetic scenes: FOA audio, equirectangular frames and labels
//! generated from one event list so all three agree.

mod render;

pub use render::{
    blob_centroid, class_color, class_frequency, render_audio, render_audio_parts, render_frames,
    render_labels, render_scene, AudioParts, Scene, BLOB_SIGMA, FRAME_RATE,
};

use std::fs;
use std::path::Path;

use ini::Ini;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::augment::AvcsTransform;
use crate::error::{Result, SeldError};
use crate::geometry::wrap_azimuth;
use crate::labels::{NUM_CLASSES, NUM_TRACKS};

pub const SAMPLE_RATE: u32 = 24_000;

/// One sound source: active on `[onset, offset)` seconds, moving in azimuth
/// at a constant rate from `azimuth` at onset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneEvent {
    pub class: usize,
    pub onset: f64,
    pub offset: f64,
    pub azimuth: f64,
    /// Degrees per second.
    pub azimuth_rate: f64,
    pub elevation: f64,
}

impl SceneEvent {
    pub fn azimuth_at(&self, t: f64) -> f64 {
        wrap_azimuth(self.azimuth + self.azimuth_rate * (t - self.onset))
    }

    pub fn is_active(&self, t: f64) -> bool {
        self.onset <= t && t < self.offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration: f64,
    pub events: Vec<SceneEvent>,
    pub snr_db: f64,
    pub frame_width: usize,
    pub frame_height: usize,
}

impl ScenarioSpec {
    pub fn new(seed: u64, duration: f64) -> Self {
        Self {
            seed,
            duration,
            events: Vec::new(),
            snr_db: 30.0,
            frame_width: 448,
            frame_height: 224,
        }
    }

    pub fn with_event(mut self, event: SceneEvent) -> Self {
        self.events.push(event);
        self
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * f64::from(SAMPLE_RATE)).round() as usize
    }

    pub fn num_label_frames(&self) -> usize {
        (self.duration * crate::labels::LABEL_RATE).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SeldError::Spec(m));
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return bad(format!("duration {} must be positive", self.duration));
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if self.frame_width != 2 * self.frame_height || self.frame_width % 4 != 0 || self.frame_width == 0 {
            return bad(format!(
                "frame {}x{} must be 2:1 with width divisible by 4",
                self.frame_width, self.frame_height
            ));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.class >= NUM_CLASSES {
                return bad(format!("event {i}: class {} >= {NUM_CLASSES}", e.class));
            }
            if !(0.0 <= e.onset && e.onset < e.offset && e.offset <= self.duration) {
                return bad(format!(
                    "event {i}: need 0 <= onset < offset <= duration, got {}..{}",
                    e.onset, e.offset
                ));
            }
            if !(-90.0..=90.0).contains(&e.elevation) || !e.azimuth.is_finite() || !e.azimuth_rate.is_finite() {
                return bad(format!("event {i}: bad direction"));
            }
        }
        // same-class overlap: count active events at every onset
        for (i, e) in self.events.iter().enumerate() {
            let overlapping = self
                .events
                .iter()
                .filter(|o| o.class == e.class && o.onset <= e.onset && e.onset < o.offset)
                .count();
            if overlapping > NUM_TRACKS {
                return bad(format!(
                    "event {i}: {overlapping} simultaneous events of class {} exceed {NUM_TRACKS}",
                    e.class
                ));
            }
        }
        for k in 0..self.num_label_frames() {
            let t = (k as f64 + 0.5) / crate::labels::LABEL_RATE;
            for c in 0..NUM_CLASSES {
                let n = self
                    .events
                    .iter()
                    .filter(|e| e.class == c && e.onset <= t && t <= e.offset)
                    .count();
                if n > NUM_TRACKS {
                    return bad(format!("label frame {k}: {n} events of class {c} exceed {NUM_TRACKS}"));
                }
            }
        }
        Ok(())
    }

    /// The scene as it looks after an augmentation transform.
    pub fn transformed(&self, t: AvcsTransform) -> ScenarioSpec {
        let mut out = self.clone();
        for e in &mut out.events {
            e.azimuth = wrap_azimuth(e.azimuth + 90.0 * f64::from(t.rotation_k));
            if t.elev_flip {
                e.elevation = -e.elevation;
            }
        }
        out
    }

    /// Random scene with up to `max_events` events whose elevations stay
    /// within `±max_elevation` degrees.
    pub fn random(seed: u64, duration: f64, max_events: usize, max_elevation: f64) -> ScenarioSpec {
        let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed_5ce0e);
        let mut spec = ScenarioSpec::new(seed, duration);
        let count = rng.gen_range(1..=max_events.max(1));
        while spec.events.len() < count {
            let len = rng.gen_range(0.3..=duration.min(2.0)).min(duration);
            let onset = rng.gen_range(0.0..=duration - len);
            let event = SceneEvent {
                class: rng.gen_range(0..NUM_CLASSES),
                onset,
                offset: onset + len,
                azimuth: rng.gen_range(-180.0..180.0),
                azimuth_rate: rng.gen_range(-30.0..30.0),
                elevation: rng.gen_range(-max_elevation..=max_elevation),
            };
            let mut trial = spec.clone().with_event(event);
            if trial.validate().is_ok() {
                std::mem::swap(&mut spec, &mut trial);
            }
        }
        spec
    }

    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("scene"))
            .set("seed", self.seed.to_string())
            .set("duration", self.duration.to_string())
            .set("snr_db", self.snr_db.to_string())
            .set("frame_width", self.frame_width.to_string())
            .set("frame_height", self.frame_height.to_string());
        for (i, e) in self.events.iter().enumerate() {
            ini.with_section(Some(format!("event.{i}")))
                .set("class", e.class.to_string())
                .set("onset", e.onset.to_string())
                .set("offset", e.offset.to_string())
                .set("azimuth", e.azimuth.to_string())
                .set("azimuth_rate", e.azimuth_rate.to_string())
                .set("elevation", e.elevation.to_string());
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    pub fn from_ini_str(text: &str) -> Result<ScenarioSpec> {
        let ini = Ini::load_from_str(text).map_err(|e| SeldError::Spec(e.to_string()))?;
        let scene = ini
            .section(Some("scene"))
            .ok_or_else(|| SeldError::Spec("missing [scene] section".into()))?;
        fn field<T: std::str::FromStr>(p: &ini::Properties, sec: &str, key: &str) -> Result<T> {
            p.get(key)
                .ok_or_else(|| SeldError::Spec(format!("[{sec}] missing `{key}`")))?
                .trim()
                .parse()
                .map_err(|_| SeldError::Spec(format!("[{sec}] bad `{key}`")))
        }
        let mut spec = ScenarioSpec {
            seed: field(scene, "scene", "seed")?,
            duration: field(scene, "scene", "duration")?,
            events: Vec::new(),
            snr_db: field(scene, "scene", "snr_db")?,
            frame_width: field(scene, "scene", "frame_width")?,
            frame_height: field(scene, "scene", "frame_height")?,
        };
        let mut indexed: Vec<(usize, SceneEvent)> = Vec::new();
        for (name, p) in ini.iter() {
            let Some(idx) = name.and_then(|n| n.strip_prefix("event.")) else {
                continue;
            };
            let sec = format!("event.{idx}");
            let idx: usize = idx.parse().map_err(|_| SeldError::Spec(format!("bad section [{sec}]")))?;
            indexed.push((
                idx,
                SceneEvent {
                    class: field(p, &sec, "class")?,
                    onset: field(p, &sec, "onset")?,
                    offset: field(p, &sec, "offset")?,
                    azimuth: field(p, &sec, "azimuth")?,
                    azimuth_rate: field(p, &sec, "azimuth_rate")?,
                    elevation: field(p, &sec, "elevation")?,
                },
            ));
        }
        indexed.sort_by_key(|e| e.0);
        spec.events = indexed.into_iter().map(|e| e.1).collect();
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ini_string()).map_err(|e| SeldError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ScenarioSpec> {
        let text = fs::read_to_string(path).map_err(|e| SeldError::io(path, e))?;
        ScenarioSpec::from_ini_str(&text)
    }
}

//! Event labels, the multi-track ACCDOA representation and the class-wise
//! ADPIT objective.

mod accdoa;
mod adpit;
mod csv;

pub use accdoa::{decode_predictions, encode_targets, AccdoaTensor, DecodeConfig};
pub use adpit::{adpit_loss, adpit_loss_value, surjections};
pub use csv::{parse_label_csv, read_label_csv, write_label_csv, format_label_csv};

use crate::error::{Result, SeldError};
use crate::geometry::Doa;

/// Label frames per second (100 ms resolution).
pub const LABEL_RATE: f64 = 10.0;
pub const NUM_CLASSES: usize = 13;
pub const NUM_TRACKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub class: usize,
    pub source: u32,
    pub doa: Doa,
}

impl Event {
    pub fn new(class: usize, source: u32, azimuth: f64, elevation: f64) -> Self {
        Self {
            class,
            source,
            doa: Doa::new(azimuth, elevation),
        }
    }
}

/// Ground truth or predictions at 100 ms label resolution.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventLabelSet {
    pub frames: Vec<Vec<Event>>,
}

impl EventLabelSet {
    pub fn empty(frames: usize) -> Self {
        Self {
            frames: vec![Vec::new(); frames],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn num_events(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    pub fn push(&mut self, frame: usize, event: Event) {
        if self.frames.len() <= frame {
            self.frames.resize(frame + 1, Vec::new());
        }
        self.frames[frame].push(event);
    }

    /// Pads with empty frames up to `frames`.
    pub fn extend_to(&mut self, frames: usize) {
        if self.frames.len() < frames {
            self.frames.resize(frames, Vec::new());
        }
    }

    /// Frames `[start, start + len)`, padding with empty frames past the end.
    pub fn window(&self, start: usize, len: usize) -> EventLabelSet {
        EventLabelSet {
            frames: (start..start + len)
                .map(|f| self.frames.get(f).cloned().unwrap_or_default())
                .collect(),
        }
    }

    /// Events of `class` in `frame`, ordered by ascending source id.
    pub fn class_events(&self, frame: usize, class: usize) -> Vec<Event> {
        let mut ev: Vec<Event> = self.frames[frame].iter().filter(|e| e.class == class).copied().collect();
        ev.sort_by_key(|e| e.source);
        ev
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        for (f, events) in self.frames.iter().enumerate() {
            for (i, e) in events.iter().enumerate() {
                if e.class >= classes {
                    return Err(SeldError::Input(format!("frame {f}: class {} >= {classes}", e.class)));
                }
                let (az, el) = (e.doa.azimuth, e.doa.elevation);
                if !(-180.0..180.0).contains(&az) || !(-90.0..=90.0).contains(&el) {
                    return Err(SeldError::Input(format!("frame {f}: angle ({az}, {el}) out of range")));
                }
                if events[..i].iter().any(|o| o.class == e.class && o.source == e.source) {
                    return Err(SeldError::Input(format!(
                        "frame {f}: duplicate (class {}, source {})",
                        e.class, e.source
                    )));
                }
            }
        }
        Ok(())
    }
}

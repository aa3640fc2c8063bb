use super::{Event, EventLabelSet};
use crate::autodiff::Var;
use crate::error::{Result, SeldError};
use crate::geometry::{angular_distance, Doa};

/// `frames × tracks × classes × 3` activity-coupled direction vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AccdoaTensor {
    pub frames: usize,
    pub tracks: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl AccdoaTensor {
    pub fn zeros(frames: usize, tracks: usize, classes: usize) -> Self {
        Self {
            frames,
            tracks,
            classes,
            data: vec![0.0; frames * tracks * classes * 3],
        }
    }

    pub fn from_vec(frames: usize, tracks: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * tracks * classes * 3 {
            return Err(SeldError::shape(
                "accdoa",
                format!("{} values for {frames}x{tracks}x{classes}x3", data.len()),
            ));
        }
        Ok(Self {
            frames,
            tracks,
            classes,
            data,
        })
    }

    /// Splits a `[B, T, N, C, 3]` (or `[T, N, C, 3]`) variable into one
    /// tensor per batch element.
    pub fn from_var(v: &Var) -> Result<Vec<Self>> {
        let shape = v.shape();
        let (b, rest) = match shape.len() {
            4 => (1, shape),
            5 => (shape[0], &shape[1..]),
            _ => return Err(SeldError::shape("accdoa", format!("rank {} output", shape.len()))),
        };
        if rest[3] != 3 {
            return Err(SeldError::shape("accdoa", format!("last axis {} != 3", rest[3])));
        }
        let values = v.value();
        let per = values.len() / b.max(1);
        (0..b)
            .map(|i| Self::from_vec(rest[0], rest[1], rest[2], values[i * per..(i + 1) * per].to_vec()))
            .collect()
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.tracks, self.classes, 3]
    }

    fn offset(&self, t: usize, n: usize, c: usize) -> usize {
        ((t * self.tracks + n) * self.classes + c) * 3
    }

    pub fn get(&self, t: usize, n: usize, c: usize) -> [f64; 3] {
        let o = self.offset(t, n, c);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set(&mut self, t: usize, n: usize, c: usize, v: [f64; 3]) {
        let o = self.offset(t, n, c);
        self.data[o..o + 3].copy_from_slice(&v);
    }

    pub fn to_var(&self) -> Var {
        Var::constant(self.data.clone(), &self.shape()).expect("consistent shape")
    }

    /// Largest vector norm in the tensor.
    pub fn max_norm(&self) -> f64 {
        self.data
            .chunks_exact(3)
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Places each active event on its own track of its class, in ascending
/// source id order. Unused tracks stay zero.
pub fn encode_targets(labels: &EventLabelSet, tracks: usize, classes: usize) -> Result<AccdoaTensor> {
    labels.validate(classes)?;
    let mut out = AccdoaTensor::zeros(labels.num_frames(), tracks, classes);
    for t in 0..labels.num_frames() {
        for c in 0..classes {
            let events = labels.class_events(t, c);
            if events.len() > tracks {
                return Err(SeldError::Capacity {
                    frame: t,
                    class: c,
                    count: events.len(),
                    tracks,
                });
            }
            for (n, e) in events.iter().enumerate() {
                out.set(t, n, c, e.doa.unit_vector());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub activity_threshold: f64,
    pub merge_angle: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            activity_threshold: 0.5,
            merge_angle: 15.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.activity_threshold > 0.0 && self.activity_threshold < 1.0) {
            return Err(SeldError::Config(format!(
                "activity threshold {} outside (0, 1)",
                self.activity_threshold
            )));
        }
        if !(self.merge_angle >= 0.0) {
            return Err(SeldError::Config(format!("merge angle {} < 0", self.merge_angle)));
        }
        Ok(())
    }
}

/// Thresholds vector norms, then greedily keeps the strongest detection of a
/// class and drops weaker ones within the merge angle. Source ids are the
/// surviving track indices.
pub fn decode_predictions(out: &AccdoaTensor, cfg: &DecodeConfig) -> EventLabelSet {
    let mut labels = EventLabelSet::empty(out.frames);
    for t in 0..out.frames {
        for c in 0..out.classes {
            let mut found: Vec<(usize, f64, [f64; 3])> = (0..out.tracks)
                .filter_map(|n| {
                    let v = out.get(t, n, c);
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    (norm > cfg.activity_threshold).then_some((n, norm, v))
                })
                .collect();
            found.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut kept: Vec<(usize, [f64; 3])> = Vec::new();
            for (n, _, v) in found {
                if kept.iter().all(|(_, k)| angular_distance(k, &v) > cfg.merge_angle) {
                    kept.push((n, v));
                }
            }
            kept.sort_by_key(|k| k.0);
            for (n, v) in kept {
                let doa = Doa::from_vector(v).expect("norm above threshold");
                labels.frames[t].push(Event {
                    class: c,
                    source: n as u32,
                    doa,
                });
            }
        }
    }
    labels
}

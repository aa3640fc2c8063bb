//! Headerless `frame,class,source,azimuth,elevation` label files.

use std::fs;
use std::path::Path;

use super::{Event, EventLabelSet};
use crate::error::{Result, SeldError};
use crate::geometry::wrap_azimuth;

/// Parses label rows; azimuths are wrapped into [-180, 180).
pub fn parse_label_csv(text: &str, origin: &Path) -> Result<EventLabelSet> {
    let mut labels = EventLabelSet::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| SeldError::format(origin, format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(bad(&format!("expected 5 fields, found {}", fields.len())));
        }
        let frame: usize = fields[0].parse().map_err(|_| bad("bad frame index"))?;
        let class: usize = fields[1].parse().map_err(|_| bad("bad class id"))?;
        let source: u32 = fields[2].parse().map_err(|_| bad("bad source id"))?;
        let az: f64 = fields[3].parse().map_err(|_| bad("bad azimuth"))?;
        let el: f64 = fields[4].parse().map_err(|_| bad("bad elevation"))?;
        if !az.is_finite() || !(-90.0..=90.0).contains(&el) {
            return Err(bad("angle out of range"));
        }
        labels.push(frame, Event::new(class, source, wrap_azimuth(az), el));
    }
    Ok(labels)
}

pub fn read_label_csv(path: &Path) -> Result<EventLabelSet> {
    let text = fs::read_to_string(path).map_err(|e| SeldError::io(path, e))?;
    parse_label_csv(&text, path)
}

pub fn format_label_csv(labels: &EventLabelSet) -> String {
    let mut out = String::new();
    for (f, events) in labels.frames.iter().enumerate() {
        let mut events = events.clone();
        events.sort_by_key(|e| (e.class, e.source));
        for e in events {
            out.push_str(&format!(
                "{f},{},{},{},{}\n",
                e.class, e.source, e.doa.azimuth, e.doa.elevation
            ));
        }
    }
    out
}

pub fn write_label_csv(path: &Path, labels: &EventLabelSet) -> Result<()> {
    fs::write(path, format_label_csv(labels)).map_err(|e| SeldError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_degrees_and_wrap() {
        let l = parse_label_csv("0,3,1,180,-10\n2,0,0,45.5,90\n", Path::new("x.csv")).unwrap();
        assert_eq!(l.num_frames(), 3);
        assert_eq!(l.frames[0][0], Event::new(3, 1, -180.0, -10.0));
        assert_eq!(l.frames[2][0].doa.azimuth, 45.5);
        assert_eq!(format_label_csv(&l), "0,3,1,-180,-10\n2,0,0,45.5,90\n");
    }

    #[test]
    fn malformed_rows_report_line() {
        let err = parse_label_csv("0,1,0,0,0\n1,2,3\n", Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_label_csv("0,1,0,0,95\n", Path::new("x.csv")).is_err());
    }
}

//! Equirectangular RGB frames and their on-disk forms.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Result, SeldError};
use crate::geometry::Doa;

/// 360° RGB24 frame, row-major `height × width × 3`. Column 0 is azimuth
/// −180° and azimuth grows with the column index; row 0 is elevation +90°.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquirectFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl EquirectFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || width != 2 * height {
            return Err(SeldError::Input(format!("frame {width}x{height} is not 2:1")));
        }
        if pixels.len() != width * height * 3 {
            return Err(SeldError::Input(format!(
                "frame {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let o = (row * self.width + col) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let o = (row * self.width + col) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Continuous pixel coordinates `(x, y)` of a direction; pixel `i`
    /// spans `[i, i + 1)`.
    pub fn doa_to_pixel(&self, doa: &Doa) -> (f64, f64) {
        let x = (doa.azimuth + 180.0) / 360.0 * self.width as f64;
        let y = (90.0 - doa.elevation) / 180.0 * self.height as f64;
        (x, y)
    }

    /// Direction at the centre of pixel `(row, col)`.
    pub fn pixel_to_doa(&self, row: usize, col: usize) -> Doa {
        Doa::new(
            (col as f64 + 0.5) / self.width as f64 * 360.0 - 180.0,
            90.0 - (row as f64 + 0.5) / self.height as f64 * 180.0,
        )
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| SeldError::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let err = |e: png::EncodingError| SeldError::format(path, e.to_string());
        let mut writer = enc.write_header().map_err(err)?;
        writer.write_image_data(&self.pixels).map_err(err)?;
        writer.finish().map_err(err)
    }

    /// Reads 8- or 16-bit gray, gray-alpha, RGB, RGBA or palette PNGs.
    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| SeldError::io(path, e))?;
        let mut dec = png::Decoder::new(BufReader::new(file));
        dec.set_transformations(png::Transformations::normalize_to_color8());
        let err = |e: png::DecodingError| SeldError::format(path, e.to_string());
        let mut reader = dec.read_info().map_err(err)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| SeldError::format(path, "image too large"))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(err)?;
        buf.truncate(info.buffer_size());
        let step = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Indexed => return Err(SeldError::format(path, "unexpanded palette")),
        };
        let rgb: Vec<u8> = buf
            .chunks_exact(step)
            .flat_map(|p| if step < 3 { [p[0]; 3] } else { [p[0], p[1], p[2]] })
            .collect();
        Self::new(info.width as usize, info.height as usize, rgb)
    }

    /// Raw interleaved RGB24 bytes plus a `<path>.dims` file holding
    /// `width height`.
    pub fn save_raw(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.pixels).map_err(|e| SeldError::io(path, e))?;
        let dims = dims_path(path);
        fs::write(&dims, format!("{} {}\n", self.width, self.height)).map_err(|e| SeldError::io(&dims, e))
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let dims = dims_path(path);
        let text = fs::read_to_string(&dims).map_err(|e| SeldError::io(&dims, e))?;
        let parsed: Vec<usize> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| SeldError::format(&dims, "expected `width height`"))?;
        let [w, h] = parsed[..] else {
            return Err(SeldError::format(&dims, "expected `width height`"));
        };
        let pixels = fs::read(path).map_err(|e| SeldError::io(path, e))?;
        Self::new(w, h, pixels)
    }

    /// Picks PNG or raw by extension (`.png` or anything else).
    pub fn load(path: &Path) -> Result<Self> {
        if is_png(path) {
            Self::load_png(path)
        } else {
            Self::load_raw(path)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if is_png(path) {
            self.save_png(path)
        } else {
            self.save_raw(path)
        }
    }
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn dims_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".dims");
    PathBuf::from(s)
}

/// File name of frame `i` in a sequence directory.
pub fn frame_file_name(i: usize, ext: &str) -> String {
    format!("frame_{i:05}.{ext}")
}

/// Loads `frame_00000.*`, `frame_00001.*`, ... in order from `dir`.
pub fn load_frame_sequence(dir: &Path) -> Result<Vec<EquirectFrame>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| SeldError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("frame_") && !name.ends_with(".dims")
        })
        .collect();
    names.sort();
    names.iter().map(|p| EquirectFrame::load(p)).collect()
}

pub fn save_frame_sequence(dir: &Path, frames: &[EquirectFrame], ext: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SeldError::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .try_for_each(|(i, f)| f.save(&dir.join(frame_file_name(i, ext))))
}

//! Named-tensor checkpoints.
//!
//! Binary layout (little endian):
//!
//! ```text
//! magic   b"SELDCKPT"
//! u32     version (1)
//! u32     tensor count
//! repeat:
//!   u32   name length, name bytes (UTF-8)
//!   u32   rank, rank × u32 dims
//!   f32 × prod(dims) payload
//! ```
//!
//! A plain-text manifest `<path>.manifest` lists `name<TAB>d0xd1x..` per
//! tensor in file order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::NamedTensor;
use crate::error::{Result, SeldError};

const MAGIC: &[u8; 8] = b"SELDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn save_checkpoint(path: &Path, state: &[NamedTensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(state.len() as u32).to_le_bytes());
    let mut manifest = String::new();
    for t in state {
        let name = t.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        let shape = t.var.shape();
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.var.value().iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{}\t{}\n", t.name, dims.join("x")));
    }
    let mut f = fs::File::create(path).map_err(|e| SeldError::io(path, e))?;
    f.write_all(&buf).map_err(|e| SeldError::io(path, e))?;
    let mp = manifest_path(path);
    fs::write(&mp, manifest).map_err(|e| SeldError::io(&mp, e))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(SeldError::format(self.path, "truncated checkpoint"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let data = fs::read(path).map_err(|e| SeldError::io(path, e))?;
    let mut r = Reader {
        data: &data,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(SeldError::format(path, "bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(SeldError::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| SeldError::format(path, "tensor name is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = r
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        entries.push(CheckpointEntry { name, shape, values });
    }
    if r.pos != data.len() {
        return Err(SeldError::format(path, "trailing bytes"));
    }
    Ok(entries)
}

/// Loads values into `state`, requiring an exact name and shape match.
pub fn load_checkpoint(path: &Path, state: &[NamedTensor]) -> Result<()> {
    let entries = read_checkpoint(path)?;
    if entries.len() != state.len() {
        return Err(SeldError::format(
            path,
            format!("checkpoint has {} tensors, model expects {}", entries.len(), state.len()),
        ));
    }
    for (e, t) in entries.iter().zip(state) {
        if e.name != t.name || e.shape != t.var.shape() {
            return Err(SeldError::format(
                path,
                format!(
                    "tensor `{}` {:?} does not match model tensor `{}` {:?}",
                    e.name,
                    e.shape,
                    t.name,
                    t.var.shape()
                ),
            ));
        }
    }
    for (e, t) in entries.iter().zip(state) {
        let mut v = t.var.value_mut();
        for (dst, &src) in v.iter_mut().zip(&e.values) {
            *dst = f64::from(src);
        }
    }
    Ok(())
}

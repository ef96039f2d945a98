// Checkpoint layout, all integers little-endian u32:
//
//   "SGENCKPT" | version | entry count
//   per entry: name length | name (UTF-8) | n c h w | n·c·h·w f32 values

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::ParamStore;
use crate::tensor::{Real, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SGENCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes parameters as 32-bit floats.
pub fn write_checkpoint<T: Real, W: Write>(params: &ParamStore<T>, mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&u32_len(params.len(), "entry count")?.to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&u32_len(name.len(), "name length")?.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        for d in t.shape().0 {
            out.write_all(&u32_len(d, "dimension")?.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(4 * t.numel());
        for v in t.data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn u32_len(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in u32")))
}

pub fn save_checkpoint<T: Real>(params: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let bytes = fs::read(path)?;
    read_checkpoint(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: impl FnOnce() -> String) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Checkpoint(format!(
                "truncated {} at offset {}: need {n} bytes, {remaining} left",
                what(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: impl FnOnce() -> String) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses a checkpoint, validating magic, version and every entry's size.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, || "magic".into())?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic at offset 0: expected {:?}, found {:?}",
            String::from_utf8_lossy(CHECKPOINT_MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32(|| "version".into())?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch at offset 8: file has {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = r.u32(|| "entry count".into())?;
    let mut store = ParamStore::new();
    for idx in 0..count {
        let start = r.pos;
        let name_len = r.u32(|| format!("name length of entry #{idx}"))? as usize;
        let name_bytes = r.take(name_len, || format!("name of entry #{idx}"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| {
                Error::Checkpoint(format!("entry #{idx} at offset {start}: name is not UTF-8"))
            })?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32(|| format!("dims of entry #{idx} `{name}`"))? as usize;
        }
        let shape = Shape(dims);
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| {
                Error::Checkpoint(format!("entry #{idx} `{name}`: shape {shape} overflows"))
            })?;
        let raw = r.take(numel, || format!("data of entry #{idx} `{name}` ({shape})"))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store
            .insert(name.clone(), Tensor::from_vec(shape, data)?)
            .map_err(|_| Error::Checkpoint(format!("duplicate entry `{name}` at offset {start}")))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after offset {}",
            bytes.len() - r.pos,
            r.pos
        )));
    }
    Ok(store)
}

//! Versioned binary container for named parameter tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CHTXPARM"
//! version    u32      1
//! bits       u32      32 or 64, width of every stored value
//! count      u32      number of records
//! record     name_len u32, name (UTF-8), rank u32, dims u32 * rank,
//!            values (bits / 8 bytes each, row-major)
//! crc32      u32      over every preceding byte
//! ```
//!
//! Values are written at the precision of the model that produced them so a
//! save/load cycle is bit-exact; loading casts to the requested precision.

use std::fs;
use std::path::Path;

use chemtext_core::nn::{ParamStore, Real, Tensor};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 8] = b"CHTXPARM";
pub const VERSION: u32 = 1;

/// Cursor over a byte slice that reports what it was reading when it ran out.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.remaining() < n {
            return Err(FormatError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }
}

/// Checks magic and version; returns the reader positioned after them.
pub(crate) fn open<'a>(bytes: &'a [u8], magic: &[u8; 8], name: &'static str, version: u32) -> Result<Reader<'a>, FormatError> {
    if bytes.len() < 8 && magic.starts_with(bytes) {
        return Err(FormatError::Truncated("magic"));
    }
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(FormatError::BadMagic { expected: name });
    }
    let mut r = Reader::new(bytes);
    r.take(8, "magic")?;
    let found = r.u32("version")?;
    if found != version {
        return Err(FormatError::Version { found, supported: version });
    }
    Ok(r)
}

pub fn encode<T: Real>(params: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * (T::BITS as usize / 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&T::BITS.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            if T::BITS == 32 {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ParamStore<T>, FormatError> {
    let mut r = open(bytes, MAGIC, "parameter checkpoint", VERSION)?;
    let bits = r.u32("value width")?;
    if bits != 32 && bits != 64 {
        return Err(FormatError::Corrupt(format!("value width {bits} bits")));
    }
    let width = bits as usize / 8;
    let count = r.u32("record count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| FormatError::Corrupt("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        if rank * 4 > r.remaining() {
            return Err(FormatError::Truncated("dimensions"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| FormatError::Corrupt(format!("{name}: shape overflows")))?;
        let raw = r.take(n.checked_mul(width).ok_or(FormatError::Truncated("values"))?, "values")?;
        let data: Vec<T> = if width == 4 {
            raw.chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect()
        } else {
            raw.chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect()
        };
        let value = Tensor::new(shape, data).map_err(|e| FormatError::Corrupt(e.to_string()))?;
        store.push(name, value);
    }
    let body = r.position();
    let stored = r.u32("checksum")?;
    if r.remaining() != 0 {
        return Err(FormatError::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(store)
}

pub fn save<T: Real>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e))
}

//! `PRIVLOC1` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"PRIVLOC1"
//! repeated until EOF:
//!   u32 name_len | name (UTF-8) | u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//! ```
//!
//! Records are written in store order, so `save -> load -> save` is byte-identical.

use std::fs;
use std::path::Path;

use crate::error::CheckpointError;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"PRIVLOC1";

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CheckpointError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<ParamStore, CheckpointError> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut r = Reader {
        buf,
        pos: MAGIC.len(),
    };
    let mut store = ParamStore::new();
    while r.pos < buf.len() {
        let name_len = r.u32()? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::BadName(at))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (buf.len() - r.pos) / 8)
            .ok_or(CheckpointError::Truncated(r.pos))?;
        let raw = r.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if store.contains(&name) {
            return Err(CheckpointError::Duplicate(name));
        }
        store.insert(name, Tensor::new(dims, data)?);
    }
    Ok(store)
}

pub fn save(params: &ParamStore, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, encode(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore, CheckpointError> {
    decode(&fs::read(path)?)
}

//! Little-endian binary checkpoint: `MPKT`, version, tensor count, then per
//! tensor the name length and UTF-8 name, rank, dims and raw `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use crate::{NnError, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"MPKT";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), NnError> {
    let v = u32::try_from(v).map_err(|_| NnError::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Serializes every parameter, in name order.
pub fn save_checkpoint(params: &ParamStore) -> Result<Vec<u8>, NnError> {
    let mut out = Vec::with_capacity(16 + params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn load_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(NnError::Checkpoint("missing MPKT magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = c.u32()?;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| NnError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = c.u32()?;
        if rank > 4 {
            return Err(NnError::Checkpoint(format!("tensor `{name}` has rank {rank}")));
        }
        let dims = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = c.take(
            n.checked_mul(8)
                .ok_or_else(|| NnError::Checkpoint("tensor too large".into()))?,
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if c.pos != bytes.len() {
        return Err(NnError::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint(params: &ParamStore, path: &Path) -> Result<(), NnError> {
    let bytes = save_checkpoint(params)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Reads a checkpoint file into `params`, which must have the same names
/// and shapes.
pub fn read_checkpoint(params: &mut ParamStore, path: &Path) -> Result<(), NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    params.load_values(load_checkpoint(&bytes)?)
}

//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "SSEMCKPT"
//! version          u32
//! param count      u32
//! metadata length  u32, then that many UTF-8 bytes
//! per parameter:
//!   name length    u32, then UTF-8 name bytes
//!   rank           u32
//!   dims           rank × u64
//!   payload        product(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{AutodiffError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSEMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters plus a free-form metadata block (the model config lives there).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub params: ParamStore,
}

fn bad(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ckpt.metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(ckpt.metadata.as_bytes());
    for (name, t) in ckpt.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutodiffError> {
        if self.buf.len() - self.pos < n {
            return Err(bad("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutodiffError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutodiffError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize) -> Result<String, AutodiffError> {
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| bad("invalid UTF-8"))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, AutodiffError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let meta_len = r.u32()? as usize;
    let metadata = r.string(meta_len)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(usize::try_from(r.u64()?).map_err(|_| bad("dimension overflow"))?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("dimension overflow"))?;
        let payload = r.take(n.checked_mul(8).ok_or_else(|| bad("dimension overflow"))?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(dims, data)?);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { metadata, params })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), AutodiffError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, AutodiffError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}

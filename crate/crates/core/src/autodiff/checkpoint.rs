//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `MOSCKPT\0`, `u32` version, `u32` element
//! byte width, `u32` metadata length and UTF-8 JSON metadata, `u32` parameter
//! count, then per parameter: `u32` name length, name bytes, `u8` kind,
//! `u8` trainable flag, `u32` rank, `u64` dims, raw values.

use std::io::Write;
use std::path::Path;

use super::{ParamKind, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MOSCKPT\0";
const VERSION: u32 = 1;

pub fn encode<T: Real>(store: &ParamStore<T>, metadata: &serde_json::Value) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(T::BYTES as u32).to_le_bytes());
    let meta = metadata.to_string();
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.kind.code());
        out.push(p.trainable as u8);
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for d in p.value.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint into a fresh store plus its metadata.
pub fn decode<T: Real>(bytes: &[u8]) -> Result<(ParamStore<T>, serde_json::Value)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let width = r.u32()? as usize;
    if width != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "element width {width}, expected {}",
            T::BYTES
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta = std::str::from_utf8(r.take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let meta: serde_json::Value =
        serde_json::from_str(meta).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
            .to_owned();
        let kind = r.take(1)?[0];
        let kind =
            ParamKind::from_code(kind).ok_or_else(|| Error::Checkpoint(format!("{name}: unknown kind {kind}")))?;
        let trainable = r.take(1)?[0] != 0;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
        let numel = numel.ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
        let raw = r.take(numel.saturating_mul(T::BYTES))?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        if store.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        let id = store.add(name, Tensor::new(shape, data)?, kind);
        store.get_mut(id).trainable = trainable;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((store, meta))
}

pub fn save<T: Real>(path: &Path, store: &ParamStore<T>, metadata: &serde_json::Value) -> Result<()> {
    let bytes = encode(store, metadata);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<T: Real>(path: &Path) -> Result<(ParamStore<T>, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

//! Flat named-tensor container.
//!
//! ```text
//! "IFW1"            4 bytes
//! version           u32 (1)
//! entry count       u32
//! per entry:
//!   name length     u32
//!   name            UTF-8 bytes
//!   rank            u32
//!   dims            u64 × rank
//!   dtype           u8 (0 = f32, 1 = f64)
//!   payload         product(dims) little-endian floats
//! ```
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{DType, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"IFW1";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.total_elements() as usize * T::DTYPE.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(T::DTYPE.code());
        for &v in tensor.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corruption(format!("truncated at byte {} reading {what}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a weight container (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let count = r.u32("entry count")?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format(format!("entry {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            dims.push(r.u64("dims")? as usize);
        }
        let code = r.take(1, "dtype")?[0];
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Format(format!("{name}: unknown dtype code {code}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Mismatch(format!("{name}: stored as {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Corruption(format!("{name}: dims {dims:?} overflow")))?;
        let payload_len = numel
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Corruption(format!("{name}: payload size overflows")))?;
        let payload = r.take(payload_len, &format!("payload of {name}"))?;
        let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
        let tensor = Tensor::new(&dims, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        store.insert(name, tensor)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Corruption(format!("{} trailing bytes after last entry", bytes.len() - r.pos)));
    }
    Ok(store)
}

pub fn save_weights<T: Real>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load_weights<T: Real>(path: impl AsRef<Path>) -> Result<ParamStore<T>> {
    decode(&fs::read(path)?)
}

//! Binary checkpoint container.
//!
//! ```text
//! magic      8 bytes   "VOCLIPCK"
//! version    u32 LE    currently 1
//! adam_step  u64 LE    optimizer timestep (0 when no optimizer state)
//! has_adam   u8        1 when moment entries follow the parameters
//! n_entries  u32 LE
//! entry:
//!   name_len u32 LE, name UTF-8
//!   dtype    u8        0 = f32, 1 = f64
//!   ndim     u32 LE, dims u64 LE × ndim
//!   data     numel × dtype size, little-endian, row-major
//! ```
//!
//! Parameters come first in [`ParamSet`] order; optimizer moments, when
//! present, follow as `adam.m.<name>` and `adam.v.<name>`.

use std::path::Path;

use crate::error::{Error, Result};

use super::optim::AdamState;
use super::tensor::{DType, Element, ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VOCLIPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamSet<T>,
    pub adam: Option<AdamState<T>>,
}

fn put_entry<T: Element>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Element>(params: &ParamSet<T>, adam: Option<&AdamState<T>>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&adam.map_or(0, |a| a.step).to_le_bytes());
    out.push(adam.is_some() as u8);
    let n = params.len() * if adam.is_some() { 3 } else { 1 };
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in params.iter() {
        put_entry(&mut out, &p.name, &p.value);
    }
    if let Some(a) = adam {
        for (p, m) in params.iter().zip(&a.m) {
            put_entry(&mut out, &format!("adam.m.{}", p.name), m);
        }
        for (p, v) in params.iter().zip(&a.v) {
            put_entry(&mut out, &format!("adam.v.{}", p.name), v);
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn entry<T: Element>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let dtype =
            DType::from_code(self.u8()?).ok_or_else(|| Error::Checkpoint(format!("unknown dtype code in `{name}`")))?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "`{name}` stores {dtype:?}, expected {:?}",
                T::DTYPE
            )));
        }
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = self.take(n * dtype.size())?;
        let data = raw.chunks_exact(dtype.size()).map(T::read_le).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        Ok((name, t))
    }
}

pub fn decode_checkpoint<T: Element>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let step = r.u64()?;
    let has_adam = r.u8()? == 1;
    let n = r.u32()? as usize;
    let n_params = if has_adam { n / 3 } else { n };
    if has_adam && !n.is_multiple_of(3) {
        return Err(Error::Checkpoint(format!(
            "{n} entries cannot hold params plus two moments"
        )));
    }
    let mut params = ParamSet::new();
    for _ in 0..n_params {
        let (name, t) = r.entry()?;
        params.push(name, t);
    }
    let adam = if has_adam {
        let mut m = Vec::with_capacity(n_params);
        let mut v = Vec::with_capacity(n_params);
        for (prefix, out) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
            for i in 0..n_params {
                let (name, t) = r.entry()?;
                let expected = format!("{prefix}{}", params.get(i).name);
                if name != expected || t.shape() != params.get(i).value.shape() {
                    return Err(Error::Checkpoint(format!("expected `{expected}`, found `{name}`")));
                }
                out.push(t);
            }
        }
        Some(AdamState { step, m, v })
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { params, adam })
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_checkpoint<T: Element>(path: &Path, params: &ParamSet<T>, adam: Option<&AdamState<T>>) -> Result<()> {
    let bytes = encode_checkpoint(params, adam);
    crate::io::write_atomic(path, |w| w.write_all(&bytes).map_err(Error::from))
}

pub fn read_checkpoint<T: Element>(path: &Path) -> Result<Checkpoint<T>> {
    decode_checkpoint(&crate::error::read_file(path)?)
}

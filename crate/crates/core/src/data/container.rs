//! The DTEN tensor container and DPRM parameter checkpoint formats.
//!
//! DTEN layout, all integers little-endian:
//!
//! ```text
//! magic "DTEN" | version u8 = 1 | dtype u8 (1 = f32, 2 = u32)
//! | rank u8 | extents rank x u32 | payload row-major
//! ```
//!
//! DPRM is `magic "DPRM" | version u8 = 1` followed by records until EOF,
//! each record `name_len u32 | name bytes (UTF-8) | DTEN bytes`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DTEN_MAGIC: [u8; 4] = *b"DTEN";
pub const DPRM_MAGIC: [u8; 4] = *b"DPRM";
pub const FORMAT_VERSION: u8 = 1;

/// Typed payload of a container.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl Payload {
    fn dtype_code(&self) -> u8 {
        match self {
            Payload::F32(_) => 1,
            Payload::U32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::U32(v) => v.len(),
        }
    }
}

/// A dense array with shape metadata, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorContainer {
    pub extents: Vec<u32>,
    pub payload: Payload,
}

impl TensorContainer {
    pub fn new(extents: Vec<u32>, payload: Payload) -> Result<TensorContainer> {
        let n: u64 = extents.iter().map(|&e| e as u64).product();
        if extents.is_empty() || extents.len() > u8::MAX as usize {
            return Err(Error::Contract(format!("container rank {} unsupported", extents.len())));
        }
        if n != payload.len() as u64 {
            return Err(Error::Contract(format!(
                "extents {extents:?} imply {n} elements, payload has {}",
                payload.len()
            )));
        }
        Ok(TensorContainer { extents, payload })
    }

    /// Narrow a tensor to its f32 storage representation.
    pub fn from_tensor(t: &Tensor) -> TensorContainer {
        let extents = t.shape().iter().map(|&e| e as u32).collect();
        let payload = Payload::F32(t.data().iter().map(|&x| x as f32).collect());
        TensorContainer { extents, payload }
    }

    pub fn from_labels(labels: &[u32]) -> TensorContainer {
        TensorContainer { extents: vec![labels.len() as u32], payload: Payload::U32(labels.to_vec()) }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        match &self.payload {
            Payload::F32(v) => Tensor::from_vec(
                self.extents.iter().map(|&e| e as usize).collect(),
                v.iter().map(|&x| x as f64).collect(),
            ),
            Payload::U32(_) => Err(Error::Contract("container holds labels, not a float tensor".into())),
        }
    }

    pub fn to_labels(&self) -> Result<Vec<u32>> {
        match &self.payload {
            Payload::U32(v) => Ok(v.clone()),
            Payload::F32(_) => Err(Error::Contract("container holds floats, not labels".into())),
        }
    }

    /// Serialized byte length.
    pub fn byte_len(&self) -> usize {
        let elem = 4usize;
        7 + 4 * self.extents.len() + elem * self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&DTEN_MAGIC);
        out.push(FORMAT_VERSION);
        out.push(self.payload.dtype_code());
        out.push(self.extents.len() as u8);
        for &e in &self.extents {
            out.extend_from_slice(&e.to_le_bytes());
        }
        match &self.payload {
            Payload::F32(v) => {
                for &x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::U32(v) => {
                for &x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse one container starting at `base` within a larger buffer; the
    /// reported error offsets are absolute.
    pub fn from_bytes_at(buf: &[u8], base: u64) -> Result<(TensorContainer, usize)> {
        let fail = |offset: u64, detail: &str| Error::Format { offset: base + offset, detail: detail.into() };
        if buf.len() < 7 {
            return Err(fail(buf.len() as u64, "truncated header"));
        }
        if buf[0..4] != DTEN_MAGIC {
            return Err(fail(0, "bad magic, expected \"DTEN\""));
        }
        if buf[4] != FORMAT_VERSION {
            return Err(fail(4, &format!("unsupported version {}", buf[4])));
        }
        let dtype = buf[5];
        if dtype != 1 && dtype != 2 {
            return Err(fail(5, &format!("unknown dtype code {dtype}")));
        }
        let rank = buf[6] as usize;
        if rank == 0 {
            return Err(fail(6, "rank must be >= 1"));
        }
        let mut pos = 7usize;
        if buf.len() < pos + 4 * rank {
            return Err(fail(buf.len() as u64, "truncated extents"));
        }
        let mut extents = Vec::with_capacity(rank);
        for _ in 0..rank {
            extents.push(u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()));
            pos += 4;
        }
        let count: u64 = extents.iter().map(|&e| e as u64).product();
        let payload_bytes = count
            .checked_mul(4)
            .ok_or_else(|| fail(7, "extent overflow"))? as usize;
        if buf.len() < pos + payload_bytes {
            return Err(fail(buf.len() as u64, "truncated payload"));
        }
        let payload = match dtype {
            1 => Payload::F32(
                buf[pos..pos + payload_bytes]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => Payload::U32(
                buf[pos..pos + payload_bytes]
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        pos += payload_bytes;
        Ok((TensorContainer { extents, payload }, pos))
    }
}

pub fn save_container(path: &Path, container: &TensorContainer) -> Result<()> {
    fs::write(path, container.to_bytes())?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<TensorContainer> {
    let buf = fs::read(path)?;
    let (container, used) = TensorContainer::from_bytes_at(&buf, 0)?;
    if used != buf.len() {
        return Err(Error::Format {
            offset: used as u64,
            detail: format!("{} trailing bytes after payload", buf.len() - used),
        });
    }
    Ok(container)
}

/// Save named parameters as a DPRM checkpoint.
pub fn save_params(path: &Path, params: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&DPRM_MAGIC);
    out.push(FORMAT_VERSION);
    for (name, tensor) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&TensorContainer::from_tensor(tensor).to_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a DPRM checkpoint into named tensors.
pub fn load_params(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let buf = fs::read(path)?;
    if buf.len() < 5 {
        return Err(Error::Format { offset: buf.len() as u64, detail: "truncated header".into() });
    }
    if buf[0..4] != DPRM_MAGIC {
        return Err(Error::Format { offset: 0, detail: "bad magic, expected \"DPRM\"".into() });
    }
    if buf[4] != FORMAT_VERSION {
        return Err(Error::Format { offset: 4, detail: format!("unsupported version {}", buf[4]) });
    }
    let mut pos = 5usize;
    let mut out = BTreeMap::new();
    while pos < buf.len() {
        if buf.len() < pos + 4 {
            return Err(Error::Format { offset: pos as u64, detail: "truncated record length".into() });
        }
        let name_len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if buf.len() < pos + name_len {
            return Err(Error::Format { offset: pos as u64, detail: "truncated record name".into() });
        }
        let name = std::str::from_utf8(&buf[pos..pos + name_len])
            .map_err(|_| Error::Format { offset: pos as u64, detail: "record name is not UTF-8".into() })?
            .to_string();
        pos += name_len;
        let (container, used) = TensorContainer::from_bytes_at(&buf[pos..], pos as u64)?;
        pos += used;
        out.insert(name, container.to_tensor()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_arithmetic_matches_spec_example() {
        // rank 4 extents (8,3,32,32): payload 8*3*32*32 f32 values.
        let n = 8 * 3 * 32 * 32;
        let c = TensorContainer::new(vec![8, 3, 32, 32], Payload::F32(vec![0.0; n])).unwrap();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), 7 + 16 + 4 * n);
    }

    #[test]
    fn bad_magic_is_positioned_format_error() {
        let mut c = TensorContainer::new(vec![2], Payload::F32(vec![1.0, 2.0])).unwrap().to_bytes();
        c[0] = b'X';
        match TensorContainer::from_bytes_at(&c, 0) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_positioned_format_error() {
        let c = TensorContainer::new(vec![4], Payload::U32(vec![1, 2, 3, 4])).unwrap().to_bytes();
        let cut = &c[..c.len() - 3];
        match TensorContainer::from_bytes_at(cut, 0) {
            Err(Error::Format { offset, detail }) => {
                assert_eq!(offset, cut.len() as u64);
                assert!(detail.contains("payload"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }
}

//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! "PCDG" | u32 version | u32 len + JSON envelope | u32 array count
//!   per array: u16 name len + name | u8 rank | u32 dims[rank] | f64 data
//! u32 CRC32 of every preceding byte
//! ```
//!
//! The envelope carries the network spec, the training configuration (as
//! free-form JSON) and the seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Classifier;
use super::spec::NetworkSpec;
use crate::autograd::{ParameterSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCDG";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope {
    spec: NetworkSpec,
    training: serde_json::Value,
    seed: u64,
}

/// A model plus the run metadata stored next to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Classifier,
    pub training: serde_json::Value,
    pub seed: u64,
}

impl Checkpoint {
    pub fn new(model: Classifier, training: serde_json::Value, seed: u64) -> Self {
        Checkpoint {
            model,
            training,
            seed,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let envelope = serde_json::to_vec(&Envelope {
            spec: self.model.spec().clone(),
            training: self.training.clone(),
            seed: self.seed,
        })?;
        let params = self.model.params();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(envelope.len(), "envelope")?.to_le_bytes());
        out.extend_from_slice(&envelope);
        out.extend_from_slice(&len_u32(params.len(), "array count")?.to_le_bytes());
        for (path, p) in params.iter() {
            let name = path.as_bytes();
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Format(format!("parameter name `{path}` is too long")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            let shape = p.value.shape();
            let rank = u8::try_from(shape.len())
                .map_err(|_| Error::Format(format!("`{path}` has rank {}", shape.len())))?;
            out.push(rank);
            for &d in shape {
                out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        if bytes.len() < 12 {
            return Err(Error::Corruption("truncated checkpoint".into()));
        }
        let body = &bytes[..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        let envelope_len = r.u32()? as usize;
        let envelope: Envelope = serde_json::from_slice(r.take(envelope_len)?)
            .map_err(|e| Error::Corruption(format!("checkpoint envelope: {e}")))?;
        if crc32fast::hash(body) != stored {
            return Err(Error::Corruption("checksum mismatch (truncated or modified file)".into()));
        }
        let count = r.u32()? as usize;
        let mut params = ParameterSet::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Corruption("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Corruption("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params
                .insert(name, Tensor::new(shape, data)?)
                .map_err(|e| Error::Corruption(e.to_string()))?;
        }
        if r.pos != body.len() {
            return Err(Error::Corruption("trailing bytes before checksum".into()));
        }
        Ok(Checkpoint {
            model: Classifier::from_parts(envelope.spec, params)?,
            training: envelope.training,
            seed: envelope.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} exceeds u32")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        // the final four bytes are the checksum, never payload
        let end = self.pos.checked_add(n).filter(|&e| e + 4 <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corruption("truncated checkpoint".into())),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

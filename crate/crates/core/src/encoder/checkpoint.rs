//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic      4 bytes  "I2PC"
//! version    u32      1
//! config     u32 image_size, u32 patch_size, u32 depth, u32 width,
//!            u32 heads, u32 mlp_hidden, u64 seed
//! count      u32      number of tensors
//! tensor     u32 name_len, name (utf-8), u32 ndim, ndim × u64 dims,
//!            product(dims) × f64
//! ```
//!
//! Encoder tensors come first in canonical order; any extra tensors (for
//! example a classification head) follow.

use std::path::Path;

use super::config::EncoderConfig;
use super::model::{ParamId, ToyEncoder};
use crate::error::{I2pError, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"I2PC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_encoder(encoder: &ToyEncoder, extras: Vec<(String, Tensor)>) -> Result<Self> {
        let mut tensors = Vec::new();
        for id in encoder.param_ids() {
            let shape = encoder.param_shape(id)?;
            let data = encoder.param(id)?.to_vec();
            tensors.push((id.to_string(), Tensor::from_vec(&shape, data)?));
        }
        tensors.extend(extras);
        Ok(Checkpoint {
            config: *encoder.config(),
            tensors,
        })
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_encoder(&self) -> Result<ToyEncoder> {
        let mut enc = ToyEncoder::zeroed(self.config)?;
        for id in enc.param_ids() {
            let name = id.to_string();
            let t = self.tensor(&name).ok_or_else(|| I2pError::Format {
                kind: "checkpoint",
                detail: format!("missing tensor {name}"),
            })?;
            let want = enc.param_shape(id)?;
            if t.shape() != want.as_slice() {
                return Err(I2pError::Format {
                    kind: "checkpoint",
                    detail: format!("{name} has shape {:?}, expected {want:?}", t.shape()),
                });
            }
            enc.param_mut(id)?.copy_from_slice(t.data());
        }
        Ok(enc)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.image_size, c.patch_size, c.depth, c.width, c.heads, c.mlp_hidden] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &s in t.shape() {
                out.extend_from_slice(&(s as u64).to_le_bytes());
            }
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format_err(&format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = EncoderConfig {
            image_size: dims[0],
            patch_size: dims[1],
            depth: dims[2],
            width: dims[3],
            heads: dims[4],
            mlp_hidden: dims[5],
            seed: r.u64()?,
        };
        config.validate()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| format_err("tensor name is not utf-8"))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(format_err("trailing bytes"));
        }
        Ok(Checkpoint { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| I2pError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| I2pError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Sum of all encoder parameters in canonical order combined with their
/// bit patterns; identical encoders give identical checksums.
pub fn parameter_checksum(encoder: &ToyEncoder) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for id in encoder.param_ids() {
        for x in encoder.param(id).expect("own id") {
            for b in x.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

fn format_err(detail: &str) -> I2pError {
    I2pError::Format {
        kind: "checkpoint",
        detail: detail.to_string(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(I2pError::Truncated {
                kind: "checkpoint",
                expected: n,
                found: self.bytes.len() - self.pos,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parameter names of an encoder, for callers that need to split encoder and
/// extra tensors.
pub fn is_encoder_tensor(name: &str) -> bool {
    name.parse::<ParamId>().is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_encoder;

    #[test]
    fn round_trip_is_bitwise_stable() {
        let enc = init_encoder(EncoderConfig { depth: 2, seed: 3, ..Default::default() }).unwrap();
        let head = Tensor::from_vec(&[2], vec![0.5, -1.25]).unwrap();
        let ck = Checkpoint::from_encoder(&enc, vec![("head.weight".into(), head)]).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.to_encoder().unwrap(), enc);
        assert_eq!(&bytes[..4], b"I2PC");
    }

    #[test]
    fn truncated_file_rejected() {
        let enc = init_encoder(EncoderConfig { depth: 1, ..Default::default() }).unwrap();
        let bytes = Checkpoint::from_encoder(&enc, vec![]).unwrap().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(I2pError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}

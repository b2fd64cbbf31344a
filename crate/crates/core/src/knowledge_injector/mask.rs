use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ImportanceMap;
use crate::encoder::LinearId;
use crate::error::{I2pError, Result};

pub const MASK_MAGIC: &[u8; 4] = b"I2PM";
pub const MASK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    /// One threshold over all eligible weights.
    #[default]
    Global,
    /// `floor(η · N_layer)` lowest entries inside each layer.
    PerLayer,
}

/// Binary mask over one `rows × cols` weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl LayerMask {
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Flat indices of the trainable entries, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

/// Which eligible weights may change during fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMask {
    pub eta: f64,
    pub layers: BTreeMap<LinearId, LayerMask>,
}

/// `floor(η · n)`.
pub fn budget(eta: f64, n: usize) -> usize {
    (eta * n as f64).floor() as usize
}

/// Marks the lowest-scoring entries as trainable. Ties are broken by layer
/// order, then row-major position.
pub fn build_mask(importance: &ImportanceMap, eta: f64, scope: MaskScope) -> Result<UpdateMask> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(I2pError::InvalidArgument(format!("eta {eta} outside [0, 1]")));
    }
    if importance.total() == 0 {
        return Err(I2pError::Empty("importance map has no entries".into()));
    }
    let mut layers: BTreeMap<LinearId, LayerMask> = importance
        .scores
        .iter()
        .map(|(&id, t)| {
            (
                id,
                LayerMask {
                    rows: t.rows(),
                    cols: t.cols(),
                    bits: vec![false; t.numel()],
                },
            )
        })
        .collect();
    match scope {
        MaskScope::Global => {
            let k = budget(eta, importance.total());
            for &(_, id, flat) in importance.ranked().iter().take(k) {
                layers.get_mut(&id).expect("ranked ids come from the map").bits[flat] = true;
            }
        }
        MaskScope::PerLayer => {
            for (id, t) in &importance.scores {
                let s = t.data();
                let mut order: Vec<usize> = (0..s.len()).collect();
                order.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
                let bits = &mut layers.get_mut(id).expect("same keys").bits;
                for &i in order.iter().take(budget(eta, s.len())) {
                    bits[i] = true;
                }
            }
        }
    }
    Ok(UpdateMask { eta, layers })
}

impl UpdateMask {
    /// Mask with every entry set to `value` for the given weight shapes.
    pub fn uniform(shapes: &BTreeMap<LinearId, (usize, usize)>, value: bool, eta: f64) -> Self {
        UpdateMask {
            eta,
            layers: shapes
                .iter()
                .map(|(&id, &(rows, cols))| {
                    (
                        id,
                        LayerMask {
                            rows,
                            cols,
                            bits: vec![value; rows * cols],
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn ones(&self) -> usize {
        self.layers.values().map(LayerMask::ones).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.values().map(|m| m.bits.len()).sum()
    }

    pub fn layer(&self, id: LinearId) -> Option<&LayerMask> {
        self.layers.get(&id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&MASK_VERSION.to_le_bytes());
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for (id, m) in &self.layers {
            let name = id.to_string();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols as u64).to_le_bytes());
            let mut packed = vec![0u8; m.bits.len().div_ceil(8)];
            for (i, &b) in m.bits.iter().enumerate() {
                if b {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MASK_MAGIC {
            return Err(I2pError::Format {
                kind: "mask",
                detail: "bad magic".into(),
            });
        }
        let version = r.u32()?;
        if version != MASK_VERSION {
            return Err(I2pError::Format {
                kind: "mask",
                detail: format!("unsupported version {version}"),
            });
        }
        let eta = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut layers = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| I2pError::Format {
                kind: "mask",
                detail: "layer id is not utf-8".into(),
            })?;
            let id: LinearId = name.parse()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| I2pError::Format {
                kind: "mask",
                detail: "shape overflow".into(),
            })?;
            let packed = r.take(n.div_ceil(8))?;
            let bits = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
            layers.insert(id, LayerMask { rows, cols, bits });
        }
        if r.pos != bytes.len() {
            return Err(I2pError::Format {
                kind: "mask",
                detail: "trailing bytes".into(),
            });
        }
        Ok(UpdateMask { eta, layers })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| I2pError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| I2pError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(I2pError::Truncated {
                kind: "mask",
                expected: n,
                found: left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

//! Flat parameter vectors and the binary checkpoint format.
//!
//! Layout on disk (all integers little-endian):
//!
//! ```text
//! magic  "FVLPWGT\0"              8 bytes
//! version u32 = 1
//! records u32
//! per record: name_len u32, name bytes, rank u32, dims u64 * rank
//! payload: f64 * total, in layout order
//! checksum u64 = FNV-1a over the payload bytes
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FVLPWGT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Name and shape of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        ParamBlock {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered parameters of a network; the unit exchanged during federation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    values: Vec<f64>,
    layout: Vec<ParamBlock>,
}

impl ModelWeights {
    pub fn zeros(layout: Vec<ParamBlock>) -> Self {
        let n = layout.iter().map(ParamBlock::len).sum();
        ModelWeights {
            values: vec![0.0; n],
            layout,
        }
    }

    pub fn from_parts(layout: Vec<ParamBlock>, values: Vec<f64>) -> Result<Self> {
        let n: usize = layout.iter().map(ParamBlock::len).sum();
        if n != values.len() {
            return Err(Error::LengthMismatch {
                expected: n,
                got: values.len(),
            });
        }
        Ok(ModelWeights { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[ParamBlock] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Start offset of every block, in layout order.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layout
            .iter()
            .map(|b| {
                let o = off;
                off += b.len();
                o
            })
            .collect()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let mut off = 0;
        for b in &self.layout {
            if b.name == name {
                return Some(&self.values[off..off + b.len()]);
            }
            off += b.len();
        }
        None
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let mut off = 0;
        for b in &self.layout {
            if b.name == name {
                return Some(&mut self.values[off..off + b.len()]);
            }
            off += b.len();
        }
        None
    }

    /// Name of the first block whose name or shape differs from `expected`.
    pub fn layout_mismatch(&self, expected: &[ParamBlock]) -> Option<String> {
        for (i, want) in expected.iter().enumerate() {
            match self.layout.get(i) {
                Some(have) if have == want => {}
                Some(have) => return Some(have.name.clone()),
                None => return Some(want.name.clone()),
            }
        }
        if self.layout.len() > expected.len() {
            return Some(self.layout[expected.len()].name.clone());
        }
        None
    }

    pub fn check_layout(&self, expected: &[ParamBlock]) -> Result<()> {
        match self.layout_mismatch(expected) {
            Some(layer) => Err(Error::LayoutMismatch { layer }),
            None => Ok(()),
        }
    }

    /// FNV-1a over the little-endian payload bytes.
    pub fn checksum(&self) -> u64 {
        fnv1a(self.values.iter().flat_map(|v| v.to_le_bytes()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 8 + 64 * self.layout.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layout.len() as u32).to_le_bytes());
        for b in &self.layout {
            out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
            for &d in &b.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.checksum().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_records = r.u32()? as usize;
        let mut layout = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("layer name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<_>>()?;
            layout.push(ParamBlock { name, shape });
        }
        let n: usize = layout.iter().map(ParamBlock::len).sum();
        let payload = r.take(n * 8)?;
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let stored = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let w = ModelWeights { values, layout };
        if w.checksum() != stored {
            return Err(Error::Checkpoint("payload checksum mismatch".into()));
        }
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
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
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
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

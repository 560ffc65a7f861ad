//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "CPSDCKPT"
//! version  u32
//! meta     u64 length, UTF-8 JSON bytes, u32 crc32 of the JSON bytes
//! count    u32 number of tensors
//! tensor   u16 name length, name bytes, u8 rank, u64 per dimension,
//!          f32 payload (row-major), u32 crc32 of everything above in this tensor
//! ```
//!
//! Tensors are stored at 32-bit precision; everything else is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"CPSDCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("checkpoint truncated while reading {context}")]
    Truncated { context: String },
    #[error("checksum mismatch in section {section}")]
    ChecksumMismatch { section: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unknown tensor {0:?} for this model version")]
    UnknownTensor(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    /// Rounds `values` to 32-bit floats.
    pub fn from_f64(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape/data mismatch");
        Tensor { name: name.into(), shape, data: values.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Checkpoint { meta, tensors: Vec::new() }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&Tensor, CheckpointError> {
        let t = self.tensor(name)?;
        if t.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            });
        }
        Ok(t)
    }

    /// Rejects any tensor whose name is not in `known`.
    pub fn check_names<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<(), CheckpointError> {
        let known: Vec<&str> = known.into_iter().collect();
        match self.tensors.iter().find(|t| !known.contains(&t.name.as_str())) {
            Some(t) => Err(CheckpointError::UnknownTensor(t.name.clone())),
            None => Ok(()),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).expect("JSON values always serialize");
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&crc32fast::hash(&meta).to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let start = out.len();
            let name = t.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let crc = crc32fast::hash(&out[start..]);
            out.extend_from_slice(&crc.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion { found: version });
        }
        let meta_len = r.u64("metadata length")? as usize;
        let meta_bytes = r.take(meta_len, "metadata")?;
        let crc = r.u32("metadata checksum")?;
        if crc32fast::hash(meta_bytes) != crc {
            return Err(CheckpointError::ChecksumMismatch { section: "metadata".into() });
        }
        let meta = serde_json::from_slice(meta_bytes)
            .map_err(|e| CheckpointError::Malformed(format!("metadata is not JSON: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for idx in 0..count {
            let start = r.pos;
            let ctx = format!("tensor #{idx}");
            let name_len = r.u16(&ctx)? as usize;
            let name = String::from_utf8(r.take(name_len, &ctx)?.to_vec())
                .map_err(|_| CheckpointError::Malformed(format!("{ctx} name is not UTF-8")))?;
            let rank = r.take(1, &ctx)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&ctx)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| CheckpointError::Malformed(format!("{ctx} shape overflows")))?;
            let payload = r.take(
                n.checked_mul(4).ok_or_else(|| CheckpointError::Malformed(format!("{ctx} too large")))?,
                &format!("payload of {name}"),
            )?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let end = r.pos;
            let crc = r.u32(&format!("checksum of {name}"))?;
            if crc32fast::hash(&bytes[start..end]) != crc {
                return Err(CheckpointError::ChecksumMismatch { section: format!("tensor {name}") });
            }
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()
    }

    pub fn load(path: &Path) -> crate::error::Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Checkpoint::from_bytes(&bytes)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated { context: context.to_string() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, ctx: &str) -> Result<u16, CheckpointError> {
        let b = self.take(2, ctx)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, ctx)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, ctx: &str) -> Result<u64, CheckpointError> {
        let b = self.take(8, ctx)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: json!({"stage": "unsup", "seed": 7}),
            tensors: vec![
                Tensor::from_f64("a/kernels", vec![2, 3, 3], &(0..18).map(|v| v as f64 * 0.1).collect::<Vec<_>>()),
                Tensor::from_f64("a/gain", vec![2], &[1.0, -0.5]),
            ],
        }
    }

    #[test]
    fn empty_roundtrip() {
        let c = Checkpoint::new(json!({"spec": {"maps": 32}}));
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn roundtrip_and_byte_stability() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn each_failure_is_distinct() {
        let bytes = sample().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic));

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert_eq!(Checkpoint::from_bytes(&bad), Err(CheckpointError::UnsupportedVersion { found: 9 }));

        let cut = &bytes[..bytes.len() - 7];
        assert!(matches!(Checkpoint::from_bytes(cut), Err(CheckpointError::Truncated { .. })));

        // flip a payload byte of the last tensor
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::ChecksumMismatch { .. })));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(CheckpointError::Malformed(_))));
    }

    #[test]
    fn name_and_shape_gates() {
        let c = sample();
        assert!(c.check_names(["a/kernels", "a/gain"]).is_ok());
        assert_eq!(c.check_names(["a/kernels"]), Err(CheckpointError::UnknownTensor("a/gain".into())));
        assert!(matches!(c.expect("a/gain", &[3]), Err(CheckpointError::ShapeMismatch { .. })));
        assert!(matches!(c.tensor("nope"), Err(CheckpointError::MissingTensor(_))));
    }
}

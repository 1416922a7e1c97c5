//! Versioned binary container for model parameters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"GOTCKPT\n"
//! 8       4     format version (u32, currently 1)
//! 12      8     header length H (u64)
//! 20      H     header, UTF-8 JSON:
//!                 { "kind", "vocab_hash", "vocab": [..], "labels": [..],
//!                   "meta": {..}, "tensors": [{"name", "shape"}, ..] }
//! 20+H    ...   tensor payloads in header order, each a run of f64 LE
//! ```
//!
//! Values are stored as `f64`, so `f32` and `f64` models round-trip
//! bit-exactly. `vocab_hash` is checked against the stored vocabulary on load.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Token, Vocabulary};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GOTCKPT\n";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    vocab_hash: String,
    vocab: Vec<String>,
    labels: Vec<String>,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorInfo, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, vocab: &Vocabulary, labels: Vec<String>, meta: serde_json::Value) -> Self {
        Checkpoint { kind: kind.to_string(), vocab: vocab.clone(), labels, meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push((TensorInfo { name: name.to_string(), shape: shape.to_vec() }, data));
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(i, _)| i.name == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            vocab_hash: self.vocab.fingerprint(),
            vocab: self.vocab.regular_tokens().iter().map(|t| t.as_str().to_string()).collect(),
            labels: self.labels.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(i, _)| i.clone()).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let payload: usize = self.tensors.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated file".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| Error::Checkpoint("truncated file".into()))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|_| Error::Checkpoint("truncated file".into()))?;
        let hlen = u64::from_le_bytes(len) as usize;
        if r.len() < hlen {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&r[..hlen])?;
        r = &r[hlen..];
        let vocab = Vocabulary::from_tokens(header.vocab.iter().map(|s| Token::new(s.clone())).collect::<Result<Vec<_>>>()?);
        if vocab.fingerprint() != header.vocab_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n: usize = info.shape.iter().product();
            if r.len() < n * 8 {
                return Err(Error::Checkpoint(format!("truncated tensor `{}`", info.name)));
            }
            let data = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            r = &r[n * 8..];
            tensors.push((info, data));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { kind: header.kind, vocab, labels: header.labels, meta: header.meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

//! Binary weight files.
//!
//! Layout (little-endian): magic `PPNW`, `u32` version, `u32` record kind,
//! `u32` length + UTF-8 `key = value` metadata, `u32` layer count, one
//! `[kind, activation, inputs, outputs, kernel, param_count]` `u32` row per
//! layer, every layer's parameters as `f32`, `u32` vector length + `f32`
//! vector values + `f32` stored norm (only when the length is non-zero),
//! and a trailing CRC32 over everything before it.

use std::path::Path;

use super::layer::{Activation, Layer, LayerKind};
use super::tensor::Real;
use crate::config::KeyValues;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PPNW";
pub const VERSION: u32 = 1;

/// What a weight file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    Embedder,
    Enhancer,
    Embedding,
}

impl RecordKind {
    fn code(self) -> u32 {
        match self {
            RecordKind::Embedder => 1,
            RecordKind::Enhancer => 2,
            RecordKind::Embedding => 3,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            1 => RecordKind::Embedder,
            2 => RecordKind::Enhancer,
            3 => RecordKind::Embedding,
            _ => return None,
        })
    }
}

/// In-memory form of a weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub kind: RecordKind,
    pub meta: KeyValues,
    pub layers: Vec<Layer<f32>>,
    pub vector: Vec<f32>,
}

const LAYER_DENSE: u32 = 1;
const LAYER_CONV: u32 = 2;
const LAYER_GRU: u32 = 3;

impl WeightFile {
    pub fn new<T: Real>(kind: RecordKind, meta: KeyValues, layers: &[Layer<T>]) -> Self {
        Self {
            kind,
            meta,
            layers: layers.iter().map(Layer::cast).collect(),
            vector: Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.meta.to_text();
        let mut out = Vec::with_capacity(64 + 4 * self.param_count() + meta.len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.kind.code());
        put_u32(&mut out, meta.len() as u32);
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.layers.len() as u32);
        for layer in &self.layers {
            let row = match layer.kind() {
                LayerKind::Dense {
                    inputs,
                    outputs,
                    activation,
                } => [LAYER_DENSE, activation.code(), inputs as u32, outputs as u32, 1],
                LayerKind::Conv1d {
                    inputs,
                    outputs,
                    kernel,
                    activation,
                } => [
                    LAYER_CONV,
                    activation.code(),
                    inputs as u32,
                    outputs as u32,
                    kernel as u32,
                ],
                LayerKind::Gru { inputs, hidden } => {
                    [LAYER_GRU, Activation::Tanh.code(), inputs as u32, hidden as u32, 1]
                }
            };
            row.iter().for_each(|&v| put_u32(&mut out, v));
            put_u32(&mut out, layer.param_count() as u32);
        }
        for layer in &self.layers {
            for &p in layer.params() {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        put_u32(&mut out, self.vector.len() as u32);
        if !self.vector.is_empty() {
            for &v in &self.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&vector_norm(&self.vector).to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format(format!(
                "file is {} bytes, too short to hold a header and checksum",
                bytes.len()
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Format(format!(
                "checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or corrupt"
            )));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a PPNW file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported version {version} (expected {VERSION})"
            )));
        }
        let kind_code = r.u32()?;
        let kind = RecordKind::from_code(kind_code)
            .ok_or_else(|| Error::Format(format!("unknown record kind {kind_code}")))?;
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let meta = KeyValues::parse(meta_text)?;
        let n_layers = r.u32()? as usize;
        let mut kinds = Vec::with_capacity(n_layers.min(1024));
        for i in 0..n_layers {
            let row = [r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?];
            let count = r.u32()? as usize;
            let activation = Activation::from_code(row[1])
                .ok_or_else(|| Error::Format(format!("layer {i}: unknown activation {}", row[1])))?;
            let (inputs, outputs, kernel) = (row[2] as usize, row[3] as usize, row[4] as usize);
            let lk = match row[0] {
                LAYER_DENSE => LayerKind::Dense {
                    inputs,
                    outputs,
                    activation,
                },
                LAYER_CONV => LayerKind::Conv1d {
                    inputs,
                    outputs,
                    kernel,
                    activation,
                },
                LAYER_GRU => LayerKind::Gru {
                    inputs,
                    hidden: outputs,
                },
                other => return Err(Error::Format(format!("layer {i}: unknown kind {other}"))),
            };
            if lk.param_count() != count {
                return Err(Error::Format(format!(
                    "layer {i}: table says {count} parameters, shape implies {}",
                    lk.param_count()
                )));
            }
            kinds.push(lk);
        }
        let mut layers = Vec::with_capacity(kinds.len());
        for lk in kinds {
            let raw = r.take(4 * lk.param_count())?;
            let params = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            layers.push(Layer::new(lk, params)?);
        }
        let vec_len = r.u32()? as usize;
        let mut vector = Vec::with_capacity(vec_len.min(1 << 20));
        if vec_len > 0 {
            for _ in 0..vec_len {
                vector.push(r.f32()?);
            }
            let stored_norm = r.f32()?;
            if stored_norm.to_bits() != vector_norm(&vector).to_bits() {
                return Err(Error::Format("vector norm check failed".into()));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                body.len() - r.pos
            )));
        }
        Ok(Self {
            kind,
            meta,
            layers,
            vector,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Fails unless this file holds `expected`.
    pub fn expect_kind(&self, expected: RecordKind) -> Result<()> {
        if self.kind != expected {
            return Err(Error::Format(format!(
                "expected a {expected:?} record, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

fn vector_norm(v: &[f32]) -> f32 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt() as f32
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

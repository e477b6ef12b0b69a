//! Versioned binary checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! "CHMXCKPT" | u32 version | u32 len, kind | u8 dtype | u32 len, config JSON
//! u32 count | count x (u32 len, name | u8 trainable | u32 rank | rank x u64 dim | data)
//! ```
//!
//! The config is stored as compact JSON with sorted keys so encoding is
//! deterministic and `save -> load -> save` is byte-identical.

use std::io::{Cursor, Read};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHMXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub kind: String,
    pub config: Value,
    pub tensors: Vec<NamedTensor<T>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn take<const N: usize>(r: &mut Cursor<&[u8]>) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(b)
}

fn take_u32(r: &mut Cursor<&[u8]>) -> Result<usize> {
    Ok(u32::from_le_bytes(take(r)?) as usize)
}

fn take_vec(r: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(bad("truncated checkpoint"));
    }
    let mut v = vec![0u8; len];
    r.read_exact(&mut v).map_err(|_| bad("truncated checkpoint"))?;
    Ok(v)
}

fn take_str(r: &mut Cursor<&[u8]>) -> Result<String> {
    let len = take_u32(r)?;
    String::from_utf8(take_vec(r, len)?).map_err(|_| bad("non-UTF-8 string"))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(kind: impl Into<String>, config: Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            config,
            tensors: Vec::new(),
        }
    }

    /// Appends every entry of `store`, prefixing names with `prefix.`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore<T>) {
        for e in store.entries() {
            self.tensors.push(NamedTensor {
                name: format!("{prefix}.{}", e.name),
                trainable: e.trainable,
                value: e.value.clone(),
            });
        }
    }

    /// Copies tensors named `prefix.*` into `store`, requiring an exact
    /// match of names, order and shapes.
    pub fn fill_store(&self, prefix: &str, store: &mut ParamStore<T>) -> Result<()> {
        let head = format!("{prefix}.");
        let mut src = ParamStore::new();
        for t in self.tensors.iter().filter(|t| t.name.starts_with(&head)) {
            src.add(&t.name[head.len()..], t.value.clone(), t.trainable);
        }
        store.load_from(&src)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.value)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.push(T::DTYPE.tag());
        put_str(&mut out, &self.config.to_string());
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(t.trainable as u8);
            put_u32(&mut out, t.value.shape().len());
            for &d in t.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.value.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if &take::<8>(&mut r)? != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let kind = take_str(&mut r)?;
        let tag = take::<1>(&mut r)?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| bad(format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(bad(format!("checkpoint holds {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let config: Value =
            serde_json::from_str(&take_str(&mut r)?).map_err(|e| bad(format!("config JSON: {e}")))?;
        let count = take_u32(&mut r)?;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = take_str(&mut r)?;
            let trainable = take::<1>(&mut r)?[0] != 0;
            let rank = take_u32(&mut r)?;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(u64::from_le_bytes(take(&mut r)?) as usize);
            }
            let n: usize = shape.iter().product();
            let size = dtype.size();
            let raw = take_vec(&mut r, n.checked_mul(size).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw.chunks_exact(size).map(T::read_le).collect();
            tensors.push(NamedTensor {
                name,
                trainable,
                value: Tensor::from_vec(&shape, data)?,
            });
        }
        if (r.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint { kind, config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(bad(format!("checkpoint holds a `{}`, expected a `{kind}`", self.kind)));
        }
        Ok(())
    }

    /// Rejects a checkpoint whose stored config differs from `expected`,
    /// listing every differing field.
    pub fn check_config(&self, expected: &Value) -> Result<()> {
        let diff = config_diff(&self.config, expected);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(diff))
        }
    }
}

/// Field-level differences between two JSON documents, as
/// `path: stored X, expected Y` lines.
pub fn config_diff(stored: &Value, expected: &Value) -> Vec<String> {
    let mut out = Vec::new();
    diff_into("", stored, expected, &mut out);
    out
}

fn diff_into(path: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                match (ma.get(k), mb.get(k)) {
                    (Some(x), Some(y)) => diff_into(&join(k), x, y, out),
                    (Some(x), None) => out.push(format!("{}: stored {x}, expected nothing", join(k))),
                    (None, Some(y)) => out.push(format!("{}: missing, expected {y}", join(k))),
                    (None, None) => {}
                }
            }
        }
        (Value::Array(xa), Value::Array(xb)) if xa.len() == xb.len() => {
            for (i, (x, y)) in xa.iter().zip(xb).enumerate() {
                diff_into(&format!("{path}[{i}]"), x, y, out);
            }
        }
        _ if a != b => out.push(format!("{}: stored {a}, expected {b}", if path.is_empty() { "<root>" } else { path })),
        _ => {}
    }
}

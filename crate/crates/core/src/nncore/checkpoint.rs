//! Portable checkpoint format.
//!
//! ```text
//! "CDN1"  u32 n_layers
//! n_layers x spec record:  u32 kind tag, then hyperparameters
//!     dense      u32 in_dim, u32 out_dim
//!     conv2d     u32 in_c, u32 out_c, u32 kh, u32 kw, u32 stride
//!     maxpool2d  u32 pool_h, u32 pool_w
//!     timedelay  u32 in_dim, u32 n_offsets, n_offsets x i32 offset
//!     pnorm      u32 group_size, f64 p
//!     relu, softmax  (none)
//!     standardize  u32 dim
//! n_layers x parameter blob: u32 count, count x f64
//! u32 n_pairs, n_pairs x (u32 len, utf-8 key, u32 len, utf-8 value)
//! ```
//! All integers and floats little-endian. Metadata pairs are written in key
//! order, so equal checkpoints serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use super::network::{Layer, LayerSpec, Network};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDN1";

pub const KEY_MODEL_KIND: &str = "model_kind";

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCheckpoint {
    pub network: Network,
    pub metadata: BTreeMap<String, String>,
}

impl NetworkCheckpoint {
    pub fn new(network: Network) -> Self {
        NetworkCheckpoint {
            network,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Parses a metadata value, failing with a config error when absent or malformed.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)
            .ok_or_else(|| Error::config(format!("checkpoint metadata lacks {key}")))?
            .parse()
            .map_err(|_| Error::config(format!("checkpoint metadata {key} is malformed")))
    }

    pub fn model_kind(&self) -> Option<&str> {
        self.meta(KEY_MODEL_KIND)
    }

    pub fn expect_kind(&self, expected: &str) -> Result<()> {
        match self.model_kind() {
            Some(k) if k == expected => Ok(()),
            other => Err(Error::ModelKind {
                expected: expected.to_string(),
                found: other.unwrap_or("<none>").to_string(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, self.network.layers.len());
        for layer in &self.network.layers {
            write_spec(&mut out, &layer.spec);
        }
        for layer in &self.network.layers {
            put_u32(&mut out, layer.params.len());
            for p in &layer.params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        put_u32(&mut out, self.metadata.len());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let n_layers = r.u32()? as usize;
        let specs = (0..n_layers)
            .map(|_| read_spec(&mut r))
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(n_layers);
        for spec in specs {
            let n = r.u32()? as usize;
            let params = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Layer::new(spec, params)?);
        }
        let n_meta = r.u32()? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(NetworkCheckpoint {
            network: Network::from_layers(layers),
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.to_path_buf(),
                    reason: "checkpoint not found".into(),
                }
            } else {
                e.into()
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn write_spec(out: &mut Vec<u8>, spec: &LayerSpec) {
    match spec {
        LayerSpec::Dense { in_dim, out_dim } => {
            put_u32(out, 0);
            put_u32(out, *in_dim);
            put_u32(out, *out_dim);
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel_h,
            kernel_w,
            stride,
        } => {
            put_u32(out, 1);
            for v in [in_channels, out_channels, kernel_h, kernel_w, stride] {
                put_u32(out, *v);
            }
        }
        LayerSpec::MaxPool2d { pool_h, pool_w } => {
            put_u32(out, 2);
            put_u32(out, *pool_h);
            put_u32(out, *pool_w);
        }
        LayerSpec::TimeDelay { offsets, in_dim } => {
            put_u32(out, 3);
            put_u32(out, *in_dim);
            put_u32(out, offsets.len());
            for o in offsets {
                out.extend_from_slice(&o.to_le_bytes());
            }
        }
        LayerSpec::PNorm { group_size, p } => {
            put_u32(out, 4);
            put_u32(out, *group_size);
            out.extend_from_slice(&p.to_le_bytes());
        }
        LayerSpec::Relu => put_u32(out, 5),
        LayerSpec::Softmax => put_u32(out, 6),
        LayerSpec::Standardize { dim } => {
            put_u32(out, 7);
            put_u32(out, *dim);
        }
    }
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec> {
    let spec = match r.u32()? {
        0 => LayerSpec::Dense {
            in_dim: r.u32()? as usize,
            out_dim: r.u32()? as usize,
        },
        1 => LayerSpec::Conv2d {
            in_channels: r.u32()? as usize,
            out_channels: r.u32()? as usize,
            kernel_h: r.u32()? as usize,
            kernel_w: r.u32()? as usize,
            stride: r.u32()? as usize,
        },
        2 => LayerSpec::MaxPool2d {
            pool_h: r.u32()? as usize,
            pool_w: r.u32()? as usize,
        },
        3 => {
            let in_dim = r.u32()? as usize;
            let n = r.u32()? as usize;
            let offsets = (0..n).map(|_| r.i32()).collect::<Result<_>>()?;
            LayerSpec::TimeDelay { offsets, in_dim }
        }
        4 => LayerSpec::PNorm {
            group_size: r.u32()? as usize,
            p: r.f64()?,
        },
        5 => LayerSpec::Relu,
        6 => LayerSpec::Softmax,
        7 => LayerSpec::Standardize {
            dim: r.u32()? as usize,
        },
        tag => return Err(Error::Format(format!("unknown layer tag {tag}"))),
    };
    Ok(spec)
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
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("metadata is not UTF-8".into()))
    }
}

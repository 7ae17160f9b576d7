//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `b"WEAVRCKP"`, `u32` version, `u32` header length, UTF-8 `key=value`
//! header (config fields, then `meta.*` entries), `u32` tensor count, and
//! per tensor: `u32` name length, name, `u32` rank, `u64` dims, `f64` data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::config::{parse_kv, WeaverConfig};
use crate::autodiff::Parameters;
use crate::error::{Result, WeaverError};
use crate::Tensor;

const MAGIC: &[u8; 8] = b"WEAVRCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: WeaverConfig,
    pub params: Parameters<f64>,
    /// free-form metadata such as scaler statistics
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut header = self.config.to_kv();
        for (k, v) in &self.meta {
            let _ = writeln!(header, "meta.{k}={v}");
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(WeaverError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(WeaverError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let header_len = r.u32()? as usize;
        let header = std::str::from_utf8(r.take(header_len)?)
            .map_err(|_| WeaverError::Checkpoint("header is not UTF-8".into()))?;
        let mut config_text = String::new();
        let mut meta = BTreeMap::new();
        for (k, v) in parse_kv(header)? {
            match k.strip_prefix("meta.") {
                Some(key) => {
                    meta.insert(key.to_string(), v);
                }
                None => {
                    let _ = writeln!(config_text, "{k}={v}");
                }
            }
        }
        let config = WeaverConfig::from_kv(&config_text, WeaverConfig::desk())?;
        let count = r.u32()?;
        let mut params = Parameters::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| WeaverError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            params.insert(name, Tensor::from_vec(&shape, data)?);
        }
        if r.at != bytes.len() {
            return Err(WeaverError::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.at
            )));
        }
        Ok(Self {
            config,
            params,
            meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| WeaverError::Checkpoint(format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

//! Binary checkpoint files.
//!
//! Layout: the magic bytes `RSM1`, a text header of `key=value` lines
//! closed by an empty line, then tensor records until end of file. Each
//! record is a little-endian `u32` name length, the UTF-8 name, a `u32`
//! rank, `rank` `u32` dimensions and the `f32` values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::ModelConfig;
use super::rsm::Rsm;
use super::weights::{Layout, Param, Weights};
use crate::error::{Result, RsmError};
use crate::kv::KvMap;
use crate::tensor::Real;

const MAGIC: &[u8; 4] = b"RSM1";
const MODEL_PREFIX: &str = "model.";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn set_header(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.header.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.header.push((key, value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for (k, v) in &self.header {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        out.push(b'\n');
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| RsmError::Checkpoint(msg);
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(bad("missing RSM1 magic".into()));
        }
        let mut pos = 4;
        let mut header = Vec::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| bad("unterminated header".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not UTF-8".into()))?;
            pos += end + 1;
            if line.is_empty() {
                break;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line `{line}`")))?;
            header.push((k.to_string(), v.to_string()));
        }
        let mut tensors = Vec::new();
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let b = bytes
                .get(*pos..*pos + 4)
                .ok_or_else(|| bad("truncated tensor record".into()))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().unwrap()))
        };
        while pos < bytes.len() {
            let n = read_u32(&mut pos)? as usize;
            let name = bytes
                .get(pos..pos + n)
                .and_then(|b| std::str::from_utf8(b).ok())
                .ok_or_else(|| bad("bad tensor name".into()))?
                .to_string();
            pos += n;
            let rank = read_u32(&mut pos)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut pos)? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = bytes
                .get(pos..pos + 4 * numel)
                .ok_or_else(|| bad(format!("truncated values for `{name}`")))?;
            pos += 4 * numel;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes to a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = tmp_path(path);
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| RsmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| RsmError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            RsmError::Checkpoint(msg) => RsmError::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The model configuration stored in the header.
    pub fn model_config(&self) -> Result<ModelConfig> {
        let pairs = self
            .header
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(MODEL_PREFIX).map(|k| (k.to_string(), v.clone())));
        let mut kv = KvMap::from_pairs(pairs);
        let expected: Vec<String> = ModelConfig::default().to_pairs().into_iter().map(|(k, _)| k).collect();
        for k in &expected {
            if !kv.contains(k) {
                kv.error(format!("header lacks `{MODEL_PREFIX}{k}`"));
            }
        }
        let config = ModelConfig::read_from(&mut kv, &ModelConfig::default());
        kv.finish().map_err(|e| RsmError::Checkpoint(e.to_string()))?;
        Ok(config)
    }
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

impl<T: Real> Rsm<T> {
    /// Header with the model configuration and one record per parameter.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let header = self
            .config()
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v))
            .collect();
        let tensors = self
            .weights()
            .params
            .iter()
            .map(|p| NamedTensor {
                name: p.spec.name.clone(),
                shape: p.spec.shape.clone(),
                data: p.data.iter().map(|v| v.to_f32().unwrap()).collect(),
            })
            .collect();
        Checkpoint { header, tensors }
    }

    /// Rebuilds a model. With `expected`, the stored architecture must be
    /// compatible with it; the stored depths are kept either way.
    pub fn from_checkpoint(ck: &Checkpoint, expected: Option<&ModelConfig>) -> Result<Self> {
        let config = ck.model_config()?;
        if let Some(exp) = expected {
            exp.compatible_with(&config)
                .map_err(|d| RsmError::Checkpoint(format!("architecture mismatch: {d}")))?;
        }
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = Vec::with_capacity(layout.specs.len());
        for spec in layout.specs {
            let t = ck
                .tensor(&spec.name)
                .ok_or_else(|| RsmError::Checkpoint(format!("missing tensor `{}`", spec.name)))?;
            if t.shape != spec.shape {
                return Err(RsmError::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    spec.name, t.shape, spec.shape
                )));
            }
            params.push(Param {
                data: Arc::new(t.data.iter().map(|&v| T::lit(v as f64)).collect()),
                spec,
            });
        }
        Rsm::new(config, Weights { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}

use std::collections::HashSet;
use std::path::Path;

use ngo_tensor::{ParamSet, Tensor};

use super::reader::Reader;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NGOC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered metadata strings plus an ordered table of named f32 tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key).ok_or_else(|| Error::Checkpoint(format!("missing metadata `{key}`")))
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let (key, value) = (key.into(), value.into());
        match self.meta.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => self.meta.push((key, value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Adds every tensor of `params` under `prefix` + its name.
    pub fn push_params(&mut self, prefix: &str, params: &ParamSet<f32>) {
        for (name, t) in params.iter() {
            let plain = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
            self.tensors.push((format!("{prefix}{name}"), plain));
        }
    }

    /// Collects the tensors whose names start with `prefix` (prefix removed).
    pub fn params(&self, prefix: &str) -> Result<ParamSet<f32>> {
        let mut p = ParamSet::new();
        for (name, t) in &self.tensors {
            if let Some(rest) = name.strip_prefix(prefix) {
                p.insert(rest.to_string(), t.clone())?;
            }
        }
        Ok(p)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            push_str16(&mut out, k)?;
            let len = u32::try_from(v.len()).map_err(|_| Error::Checkpoint(format!("metadata `{k}` too long")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            if !seen.insert(name.as_str()) {
                return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
            }
            push_str16(&mut out, name)?;
            let rank =
                u8::try_from(t.shape().len()).map_err(|_| Error::Checkpoint(format!("`{name}`: rank too large")))?;
            out.push(rank);
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("`{name}`: dimension too large")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let n_meta = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n_meta.min(1024));
        for _ in 0..n_meta {
            let klen = r.u16()? as usize;
            let k = r.string(klen)?;
            let vlen = r.u32()? as usize;
            let v = r.string(vlen)?;
            meta.push((k, v));
        }
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(4096));
        let mut seen = HashSet::new();
        for _ in 0..n_tensors {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            if !seen.insert(name.clone()) {
                return Err(r.bad(format!("duplicate tensor `{name}`")));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = match n {
                Some(n) if n > 0 && n.checked_mul(4).is_some_and(|b| b <= r.remaining()) => n,
                _ => return Err(r.bad(format!("tensor `{name}`: payload for shape {shape:?} does not fit"))),
            };
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(r.f32()?);
            }
            let t = Tensor::new(&shape, data).map_err(|e| r.bad(format!("tensor `{name}`: {e}")))?;
            tensors.push((name, t));
        }
        r.finish()?;
        Ok(Checkpoint { meta, tensors })
    }

    /// Writes through a temporary file so a crash never leaves a partial
    /// checkpoint under the final name.
    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes, path)
    }
}

fn push_str16(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Checkpoint(format!("name `{s}` too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

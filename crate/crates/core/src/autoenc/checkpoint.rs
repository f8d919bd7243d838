//! Binary model files: an `FLAE` magic, a format version, the layer sizes and
//! activation tags, then the parameters as little-endian `f64`.

use std::path::Path;

use super::model::{Activation, Model};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FLAE";
const VERSION: u32 = 1;

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.params().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dims().len() as u32).to_le_bytes());
    for &d in model.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend(model.activations().iter().map(|a| a.tag()));
    out.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Format {
                offset: self.at as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a model checkpoint".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let n_dims = r.u32("layer count")? as usize;
    if n_dims > 1024 {
        return Err(Error::Format {
            offset: 8,
            message: format!("implausible layer count {n_dims}"),
        });
    }
    let dims = (0..n_dims)
        .map(|_| r.u32("layer size").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let tag_at = r.at;
    let activations = r
        .take(n_dims.saturating_sub(1), "activation tags")?
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            Activation::from_tag(t).ok_or(Error::Format {
                offset: (tag_at + k) as u64,
                message: format!("unknown activation tag {t}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count_at = r.at;
    let count = r.u64("parameter count")? as usize;
    if count.checked_mul(8) != Some(bytes.len() - r.at) {
        return Err(Error::Format {
            offset: count_at as u64,
            message: format!("{count} parameters declared, {} payload bytes present", bytes.len() - r.at),
        });
    }
    let params = r
        .take(count * 8, "parameters")?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Model::from_parts(&dims, activations, params)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

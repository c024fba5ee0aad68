//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "ICUPCKPT"
//! version  u32
//! meta     u32 length + UTF-8 JSON (CheckpointMeta)
//! count    u32 number of arrays
//! array*   u32 name length + name, u32 ndim, u64 dims..., values
//! ```
//!
//! Values are always stored as `f32`; double-precision weights are rounded.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::Params;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::math::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICUPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

impl std::str::FromStr for Precision {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Precision::Single),
            "double" => Ok(Precision::Double),
            _ => Err(Error::config("precision", format!("expected single or double, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub vocab_size: usize,
    /// Fingerprint of the vocabulary the model was trained against.
    pub vocab_fingerprint: String,
    pub step: u64,
    pub seed: u64,
    pub precision: Precision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub meta: CheckpointMeta,
    pub params: Params<f64>,
}

impl ModelCheckpoint {
    /// Weights are rounded to `f32`, so a saved and reloaded checkpoint
    /// compares equal to the in-memory one.
    pub fn new<F: Real>(meta: CheckpointMeta, params: &Params<F>) -> Self {
        ModelCheckpoint {
            meta,
            params: params.cast::<f32>().cast(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::json("checkpoint meta", e))?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let specs = self.params.array_specs();
        out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
        for ((name, dims), values) in specs.iter().zip(self.params.arrays()) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for d in dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta: CheckpointMeta =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::json("checkpoint meta", e))?;
        meta.model.validate()?;
        let mut params = Params::<f64>::zeros(&meta.model, meta.vocab_size);
        let specs = params.array_specs();
        let count = r.u32()? as usize;
        if count != specs.len() {
            return Err(Error::Format(format!(
                "checkpoint has {count} arrays, model expects {}",
                specs.len()
            )));
        }
        for ((name, dims), dst) in specs.iter().zip(params.arrays_mut()) {
            let name_len = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            if got != name {
                return Err(Error::Format(format!("expected array {name}, found {got}")));
            }
            let ndim = r.u32()? as usize;
            let got_dims = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &got_dims != dims {
                return Err(Error::Format(format!(
                    "array {name} has shape {got_dims:?}, expected {dims:?}"
                )));
            }
            for v in dst.iter_mut() {
                *v = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint arrays".into()));
        }
        if !params.is_finite() {
            return Err(Error::Numeric("checkpoint contains non-finite weights".into()));
        }
        Ok(ModelCheckpoint { meta, params })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
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
            .ok_or_else(|| Error::Format("checkpoint is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, CellType};

    fn sample(precision: Precision) -> ModelCheckpoint {
        let model = ModelConfig {
            embedding_dim: 5,
            hidden_size: 4,
            num_layers: 2,
            cell_type: CellType::Lstm,
            ..ModelConfig::default()
        };
        let params: Params<f32> = init_params(&model, 9, 3);
        ModelCheckpoint::new(
            CheckpointMeta {
                model,
                vocab_size: 9,
                vocab_fingerprint: "abc".into(),
                step: 17,
                seed: 3,
                precision,
            },
            &params,
        )
    }

    #[test]
    fn round_trip_is_exact() {
        for precision in [Precision::Single, Precision::Double] {
            let ck = sample(precision);
            let back = ModelCheckpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample(Precision::Single).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelCheckpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelCheckpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample(Precision::Double);
        ck.save(&path).unwrap();
        assert_eq!(ModelCheckpoint::load(&path).unwrap(), ck);
    }
}

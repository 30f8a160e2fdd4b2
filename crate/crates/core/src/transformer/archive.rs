//! Portable weight archive (`.tpw`).
//!
//! Little-endian layout:
//!
//! ```text
//! "TPW1"                      4 bytes magic
//! version: u32                currently 1
//! tensor_count: u32
//! per tensor:
//!   name_len: u16, name: UTF-8
//!   rank: u8, dims: rank × u32
//!   dtype: u8                 0 = f32
//!   payload: product(dims) × 4 bytes
//! metadata_len: u32, metadata: UTF-8 JSON {"config": ModelConfig, "source": "..."}
//! ```
//!
//! Tensor names follow the scheme documented in [`super::layout`].

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"TPW1";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("bad magic {0:?}, expected \"TPW1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated archive while reading {context}")]
    Truncated { context: String },
    #[error("tensor {name:?}: unsupported dtype {dtype}")]
    UnsupportedDtype { name: String, dtype: u8 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("duplicate tensor {0:?}")]
    DuplicateTensor(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("unexpected tensor {0:?} for the embedded config")]
    UnexpectedTensor(String),
    #[error("tensor {name:?}: shape {found:?} does not match config shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("{0} trailing bytes after metadata")]
    TrailingBytes(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMetadata {
    pub config: ModelConfig,
    #[serde(default)]
    pub source: String,
}

/// Named tensors plus metadata, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: ArchiveMetadata,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: &str) -> Result<&'a [u8], ArchiveError> {
        if self.buf.len() - self.pos < n {
            return Err(ArchiveError::Truncated {
                context: context.to_string(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, ctx: &str) -> Result<u8, ArchiveError> {
        Ok(self.take(1, ctx)?[0])
    }

    fn u16(&mut self, ctx: &str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2, ctx)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().expect("4 bytes")))
    }
}

impl WeightArchive {
    pub fn from_model(model: &Model, source: &str) -> Self {
        Self {
            tensors: model
                .tensors()
                .map(|(spec, data)| {
                    (
                        spec.name.clone(),
                        Tensor::new(spec.shape.clone(), data.to_vec()).expect("layout shape"),
                    )
                })
                .collect(),
            metadata: ArchiveMetadata {
                config: model.config().clone(),
                source: source.to_string(),
            },
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.iter().map(|(n, t)| n.len() + 16 + t.len() * 4).sum();
        let mut out = Vec::with_capacity(payload + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.push(DTYPE_F32);
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = serde_json::to_vec(&self.metadata).expect("metadata serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(ArchiveError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::VersionMismatch { found: version });
        }
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for idx in 0..count {
            let ctx = format!("tensor #{idx} header");
            let name_len = r.u16(&ctx)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &ctx)?)
                .map_err(|_| ArchiveError::BadName)?
                .to_string();
            let rank = r.u8(&name)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&name)? as usize);
            }
            let dtype = r.u8(&name)?;
            if dtype != DTYPE_F32 {
                return Err(ArchiveError::UnsupportedDtype { name, dtype });
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4, &format!("payload of tensor {name:?}"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::new(shape.clone(), data).map_err(|_| ArchiveError::ShapeMismatch {
                name: name.clone(),
                expected: vec![],
                found: shape,
            })?;
            tensors.push((name, t));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = r.take(meta_len, "metadata")?;
        let metadata: ArchiveMetadata =
            serde_json::from_slice(meta).map_err(|e| ArchiveError::Metadata(e.to_string()))?;
        if r.pos != bytes.len() {
            return Err(ArchiveError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { tensors, metadata })
    }

    /// Assembles a model, checking every tensor against the embedded config.
    pub fn into_model(self) -> Result<Model, ArchiveError> {
        let cfg = self.metadata.config.clone();
        cfg.validate().map_err(|e| ArchiveError::Metadata(e.to_string()))?;
        let mut model = Model::zeros(cfg).map_err(|e| ArchiveError::Metadata(e.to_string()))?;
        let mut by_name: HashMap<String, Tensor> = HashMap::with_capacity(self.tensors.len());
        for (name, t) in self.tensors {
            if model.layout().get(&name).is_none() {
                return Err(ArchiveError::UnexpectedTensor(name));
            }
            if by_name.insert(name.clone(), t).is_some() {
                return Err(ArchiveError::DuplicateTensor(name));
            }
        }
        for spec in model.layout().entries().to_vec() {
            let t = by_name
                .remove(&spec.name)
                .ok_or_else(|| ArchiveError::MissingTensor(spec.name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ArchiveError::ShapeMismatch {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            model.params_mut()[spec.range()].copy_from_slice(t.data());
        }
        Ok(model)
    }
}

pub fn save_weights(model: &Model, source: &str) -> Vec<u8> {
    WeightArchive::from_model(model, source).to_bytes()
}

pub fn load_weights(bytes: &[u8]) -> Result<(Model, ArchiveMetadata), ArchiveError> {
    let archive = WeightArchive::parse(bytes)?;
    let meta = archive.metadata.clone();
    Ok((archive.into_model()?, meta))
}

pub fn write_archive(path: &Path, model: &Model, source: &str) -> Result<(), ArchiveError> {
    let bytes = save_weights(model, source);
    let tmp = path.with_extension("tpw.tmp");
    let io = |source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_archive(path: &Path) -> Result<(Model, ArchiveMetadata), ArchiveError> {
    let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_weights(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> Model {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_mlp: 16,
            vocab_size: 11,
            ctx_len: 6,
            pos_scale: 1.5,
            tied_embeddings: true,
        };
        Model::init_with_std(cfg, 0.02, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn round_trip_bitwise() {
        let m = small();
        let bytes = save_weights(&m, "unit");
        let (back, meta) = load_weights(&bytes).unwrap();
        assert_eq!(meta.source, "unit");
        assert_eq!(meta.config, *m.config());
        let a: Vec<u32> = m.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn header_bytes_follow_format() {
        let bytes = save_weights(&small(), "x");
        assert_eq!(&bytes[..4], b"TPW1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        assert_eq!(count as usize, small().layout().entries().len());
        // first tensor is "wte"
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 3);
        assert_eq!(&bytes[14..17], b"wte");
        assert_eq!(bytes[17], 2);
    }

    #[test]
    fn distinct_errors() {
        let good = save_weights(&small(), "x");

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(load_weights(&bad), Err(ArchiveError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(load_weights(&bad), Err(ArchiveError::VersionMismatch { found: 2 })));

        // Cut inside the first payload.
        let err = load_weights(&good[..40]).unwrap_err();
        match err {
            ArchiveError::Truncated { context } => assert!(context.contains("wte"), "{context}"),
            e => panic!("unexpected {e:?}"),
        }

        // Drop the last tensor from an otherwise valid archive.
        let mut archive = WeightArchive::parse(&good).unwrap();
        let (dropped, _) = archive.tensors.pop().unwrap();
        let err = archive.into_model().unwrap_err();
        assert!(matches!(err, ArchiveError::MissingTensor(ref n) if *n == dropped));

        let mut archive = WeightArchive::parse(&good).unwrap();
        archive.tensors[1].1 = Tensor::zeros(&[5, 8]);
        assert!(matches!(archive.into_model(), Err(ArchiveError::ShapeMismatch { .. })));

        let mut archive = WeightArchive::parse(&good).unwrap();
        archive.tensors.push(("lm_head.weight".into(), Tensor::zeros(&[11, 8])));
        assert!(matches!(archive.into_model(), Err(ArchiveError::UnexpectedTensor(_))));
    }

    #[test]
    fn untied_head_round_trips() {
        let mut cfg = small().config().clone();
        cfg.tied_embeddings = false;
        let m = Model::init_with_std(cfg, 0.02, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (back, _) = load_weights(&save_weights(&m, "untied")).unwrap();
        assert_eq!(back, m);
        assert!(back.tensor("lm_head.weight").is_some());
    }
}

//! Model checkpoints in the `GCKP` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "GCKP"
//! version      u32      1
//! tensor_count u32
//! meta_len     u32      length of the UTF-8 JSON metadata block
//! metadata     meta_len bytes
//! tensors      tensor_count × { name_len: u16, name: UTF-8 bytes,
//!                               rank: u8, dims: rank × u32,
//!                               values: prod(dims) × f32 }
//! ```
//!
//! The metadata records the training stage, epoch count, seed, a hash of the
//! model architecture configuration, and a SHA-256 digest of the tensor
//! section. The digest is re-checked on load, so any corruption of parameter
//! bytes surfaces as [`DataError::IntegrityFailure`] rather than silently
//! producing a broken model.

use std::path::Path;

use serde::{Deserialize, Serialize};


use super::binio::{put_f32s, put_u16, put_u32, Cursor};
use super::{io_err, DataError};
use crate::model::StudentModel;
use crate::tensor::Tensor;
use crate::Element;

const MAGIC: &[u8; 4] = b"GCKP";
const VERSION: u32 = 1;

/// Stage tag for a checkpoint produced by backbone training.
pub const STAGE_BACKBONE: u32 = 1;
/// Stage tag for a checkpoint produced by head/relation training.
pub const STAGE_HEAD: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: u32,
    pub epoch: u32,
    pub seed: u64,
    pub model_config_hash: String,
    /// SHA-256 of the tensor section; filled in by [`save_checkpoint`].
    #[serde(default)]
    pub payload_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<CheckpointTensor>,
}

impl Checkpoint {
    /// Snapshots every named parameter of a model. Values are converted to
    /// `f32`, the checkpoint's storage type.
    pub fn from_model<T: Element>(model: &StudentModel<T>, meta: CheckpointMeta) -> Self {
        let tensors = model
            .named_params()
            .into_iter()
            .map(|(name, tensor)| CheckpointTensor {
                name,
                dims: tensor.shape().to_vec(),
                values: tensor.data().iter().map(|v| v.as_f64() as f32).collect(),
            })
            .collect();
        Checkpoint { meta, tensors }
    }

    pub fn tensor(&self, name: &str) -> Result<&CheckpointTensor, DataError> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| DataError::MissingTensor {
                name: name.to_string(),
            })
    }

    /// Errors unless the checkpoint was written under the given model
    /// architecture hash.
    pub fn expect_model_hash(&self, expected: &str) -> Result<(), DataError> {
        if self.meta.model_config_hash != expected {
            return Err(DataError::ConfigMismatch {
                expected: expected.to_string(),
                found: self.meta.model_config_hash.clone(),
            });
        }
        Ok(())
    }

    /// Writes every stored tensor into the model's like-named parameter.
    /// The checkpoint and model must hold exactly the same parameter names;
    /// a missing or extra tensor is an error, as is any shape difference.
    pub fn apply_to_model<T: Element>(&self, model: &mut StudentModel<T>) -> Result<(), DataError> {
        let model_names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for name in &model_names {
            if !self.tensors.iter().any(|t| &t.name == name) {
                return Err(DataError::MissingTensor { name: name.clone() });
            }
        }
        for t in &self.tensors {
            if !model_names.contains(&t.name) {
                return Err(DataError::UnexpectedTensor {
                    name: t.name.clone(),
                });
            }
        }
        for t in &self.tensors {
            let values: Vec<T> = t.values.iter().map(|&v| T::from_f64(f64::from(v))).collect();
            let tensor = Tensor::param(&t.dims, values)?;
            model.set_param(&t.name, tensor)?;
        }
        Ok(())
    }
}

fn encode_tensor_section(tensors: &[CheckpointTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        put_u16(&mut out, t.name.len() as u16);
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            put_u32(&mut out, d as u32);
        }
        put_f32s(&mut out, &t.values);
    }
    out
}

/// Writes the checkpoint atomically (temp file + rename) with
/// `meta.payload_hash` recomputed over the tensor section.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<(), DataError> {
    let section = encode_tensor_section(&checkpoint.tensors);
    let mut meta = checkpoint.meta.clone();
    meta.payload_hash = crate::config::hex_sha256(&section);
    let meta_json = serde_json::to_string(&meta).expect("metadata is serializable");

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, checkpoint.tensors.len() as u32);
    put_u32(&mut out, meta_json.len() as u32);
    out.extend_from_slice(meta_json.as_bytes());
    out.extend_from_slice(&section);

    let tmp = path.with_extension("gckp.tmp");
    std::fs::write(&tmp, &out).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut cur = Cursor::new(&bytes, path);

    if cur.take(4, "checkpoint header")? != MAGIC {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected: "GCKP",
        });
    }
    let version = cur.u32("checkpoint header")?;
    if version != VERSION {
        return Err(cur.bad_header(format!("unsupported version {version}")));
    }
    let tensor_count = cur.u32("checkpoint header")? as usize;
    let meta_len = cur.u32("checkpoint header")? as usize;
    let meta_json = cur.utf8(meta_len, "metadata")?;
    let meta: CheckpointMeta = serde_json::from_str(&meta_json).map_err(|e| DataError::Json {
        path: path.display().to_string(),
        source: e,
    })?;

    let section_start = bytes.len() - cur.remaining();
    if crate::config::hex_sha256(&bytes[section_start..]) != meta.payload_hash {
        return Err(DataError::IntegrityFailure {
            path: path.display().to_string(),
        });
    }

    let mut tensors = Vec::with_capacity(tensor_count.min(1024));
    for _ in 0..tensor_count {
        let name_len = cur.u16("tensor name")? as usize;
        let name = cur.utf8(name_len, "tensor name")?;
        let rank = cur.u8("tensor dims")? as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut numel = 1usize;
        for _ in 0..rank {
            let d = cur.u32("tensor dims")? as usize;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| cur.bad_header(format!("tensor {name:?} dimensions overflow")))?;
            dims.push(d);
        }
        let values = cur.f32_vec(numel, "tensor values")?;
        tensors.push(CheckpointTensor { name, dims, values });
    }
    cur.finish()?;
    Ok(Checkpoint { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn sample_meta() -> CheckpointMeta {
        CheckpointMeta {
            stage: STAGE_BACKBONE,
            epoch: 30,
            seed: 7,
            model_config_hash: "abc123".to_string(),
            payload_hash: String::new(),
        }
    }

    fn sample_checkpoint() -> Checkpoint {
        Checkpoint {
            meta: sample_meta(),
            tensors: vec![
                CheckpointTensor {
                    name: "w".into(),
                    dims: vec![2, 3],
                    values: vec![0.5, -1.25, 3.0, 0.0, 7.5, -0.125],
                },
                CheckpointTensor {
                    name: "b".into(),
                    dims: vec![2],
                    values: vec![0.0, 1.0],
                },
            ],
        }
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_side: 8,
            input_channels: 1,
            conv_channels: vec![2, 3],
            feature_dim: 4,
            embed_dim: 5,
            relation_hidden: 4,
            relation_dim: 3,
            proj_dim: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gckp");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let first = std::fs::read(&path).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.tensors, sample_checkpoint().tensors);
        assert_eq!(loaded.meta.stage, STAGE_BACKBONE);
        assert!(!loaded.meta.payload_hash.is_empty());

        let path2 = dir.path().join("model2.gckp");
        save_checkpoint(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path2).unwrap(), first);
    }

    #[test]
    fn flipping_a_payload_bit_fails_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gckp");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DataError::IntegrityFailure { .. })
        ));
    }

    #[test]
    fn truncated_file_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gckp");
        save_checkpoint(&sample_checkpoint(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        // Either the JSON block or the payload hash check fails first,
        // depending on where the cut lands; both are structured errors.
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn model_state_survives_a_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gckp");
        let cfg = tiny_config();
        let model = StudentModel::<f32>::new(&cfg, 6, 7).unwrap();
        let ckpt = Checkpoint::from_model(&model, sample_meta());
        save_checkpoint(&ckpt, &path).unwrap();

        let mut other = StudentModel::<f32>::new(&cfg, 6, 99).unwrap();
        load_checkpoint(&path).unwrap().apply_to_model(&mut other).unwrap();

        for ((name_a, a), (name_b, b)) in model.named_params().iter().zip(other.named_params()) {
            assert_eq!(name_a, &name_b);
            assert_eq!(a.shape(), b.shape());
            let same_bits = a
                .data()
                .iter()
                .zip(b.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same_bits, "parameter {name_a} changed across round trip");
        }
    }

    #[test]
    fn apply_rejects_missing_and_extra_tensors() {
        let cfg = tiny_config();
        let model = StudentModel::<f32>::new(&cfg, 6, 7).unwrap();
        let mut target = StudentModel::<f32>::new(&cfg, 6, 8).unwrap();

        let mut missing = Checkpoint::from_model(&model, sample_meta());
        missing.tensors.pop();
        assert!(matches!(
            missing.apply_to_model(&mut target),
            Err(DataError::MissingTensor { .. })
        ));

        let mut extra = Checkpoint::from_model(&model, sample_meta());
        extra.tensors.push(CheckpointTensor {
            name: "stray".into(),
            dims: vec![1],
            values: vec![0.0],
        });
        assert!(matches!(
            extra.apply_to_model(&mut target),
            Err(DataError::UnexpectedTensor { .. })
        ));
    }

    #[test]
    fn model_hash_guard_detects_config_drift() {
        let ckpt = sample_checkpoint();
        assert!(ckpt.expect_model_hash("abc123").is_ok());
        assert!(matches!(
            ckpt.expect_model_hash("other"),
            Err(DataError::ConfigMismatch { .. })
        ));
    }
}

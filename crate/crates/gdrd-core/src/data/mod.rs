//! Dataset ingestion, image IO, resolution degradation, teacher stores,
//! checkpoints, and the synthetic dataset generator.
//!
//! Two binary formats live here, both little-endian and bit-exact under
//! round-trips:
//!
//! - `GTEN` teacher stores: per-sample feature vectors (and optionally
//!   logits) keyed by sample id, standing in for live teacher models.
//! - `GCKP` checkpoints: named parameter tensors plus a JSON metadata block.
//!
//! Readers of both formats are total: any malformed input yields a
//! structured [`DataError`], never a panic or an unbounded allocation.

mod binio;
mod checkpoint;
mod degrade;
mod manifest;
mod pgm;
mod store;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, STAGE_BACKBONE, STAGE_HEAD};
pub use degrade::degrade;
pub use manifest::{load_manifest, save_manifest, Manifest, ManifestRecord};
pub use pgm::{load_image, read_pgm, write_pgm, PgmImage};
pub use store::{load_store, save_store, TeacherRecord, TeacherStore};
pub use synth::{generate_synth, SynthConfig, SynthOutput};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("duplicate sample id {id:?}")]
    DuplicateId { id: String },
    #[error("labels must cover 0..{expected} contiguously; label {label} missing")]
    NonContiguousLabels { expected: usize, label: usize },
    #[error("manifest references missing image {path}")]
    MissingImage { path: String },
    #[error("{path}: expected magic {expected:?}")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: {message}")]
    BadHeader { path: String, message: String },
    #[error("{path}: file ends inside {section}")]
    Truncated { path: String, section: &'static str },
    #[error("{path}: {extra} trailing bytes after the declared records")]
    TrailingBytes { path: String, extra: usize },
    #[error("{what}: expected dimension {expected}, got {got}")]
    DimMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("no teacher record for id {id:?}")]
    UnknownId { id: String },
    #[error("{path}: payload hash does not match metadata (file corrupted or tampered)")]
    IntegrityFailure { path: String },
    #[error("checkpoint was written under model config {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("checkpoint is missing tensor {name:?}")]
    MissingTensor { name: String },
    #[error("checkpoint holds unexpected tensor {name:?}")]
    UnexpectedTensor { name: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

//! Teacher feature stores: precomputed per-sample teacher outputs serialized
//! in the `GTEN` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "GTEN"
//! version    u32      1
//! count      u32      number of records
//! feat_dim   u32      feature vector length
//! has_logits u8       0 or 1
//! logit_dim  u32      logit vector length (0 iff has_logits == 0)
//! records    count ×  { id_len: u16, id: UTF-8 bytes,
//!                       features: feat_dim × f32,
//!                       logits: logit_dim × f32 (only if has_logits) }
//! ```
//!
//! Record order is preserved exactly, so write→read→write is bit-identical.

use std::collections::HashMap;
use std::path::Path;

use super::binio::{put_f32s, put_u16, put_u32, Cursor};
use super::{io_err, DataError};
use crate::tensor::Tensor;
use crate::Element;

const MAGIC: &[u8; 4] = b"GTEN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherRecord {
    pub id: String,
    pub features: Vec<f32>,
    pub logits: Option<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct TeacherStore {
    feat_dim: usize,
    logit_dim: Option<usize>,
    records: Vec<TeacherRecord>,
    index: HashMap<String, usize>,
}

impl TeacherStore {
    pub fn new(feat_dim: usize, logit_dim: Option<usize>) -> Self {
        TeacherStore {
            feat_dim,
            logit_dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn logit_dim(&self) -> Option<usize> {
        self.logit_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TeacherRecord] {
        &self.records
    }

    pub fn push(&mut self, record: TeacherRecord) -> Result<(), DataError> {
        if record.features.len() != self.feat_dim {
            return Err(DataError::DimMismatch {
                what: format!("features of record {:?}", record.id),
                expected: self.feat_dim,
                got: record.features.len(),
            });
        }
        match (&record.logits, self.logit_dim) {
            (None, None) => {}
            (Some(l), Some(dim)) if l.len() == dim => {}
            (logits, _) => {
                return Err(DataError::DimMismatch {
                    what: format!("logits of record {:?}", record.id),
                    expected: self.logit_dim.unwrap_or(0),
                    got: logits.as_ref().map_or(0, Vec::len),
                });
            }
        }
        if self.index.contains_key(&record.id) {
            return Err(DataError::DuplicateId {
                id: record.id.clone(),
            });
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn lookup(&self, id: &str) -> Result<&TeacherRecord, DataError> {
        self.index
            .get(id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| DataError::UnknownId { id: id.to_string() })
    }

    /// Stacks the feature vectors for `ids` into an untracked `(n, feat_dim)`
    /// tensor, in the order given.
    pub fn features_tensor<T: Element>(
        &self,
        ids: &[impl AsRef<str>],
    ) -> Result<Tensor<T>, DataError> {
        let mut data = Vec::with_capacity(ids.len() * self.feat_dim);
        for id in ids {
            let rec = self.lookup(id.as_ref())?;
            data.extend(rec.features.iter().map(|&v| T::from_f64(f64::from(v))));
        }
        Ok(Tensor::from_vec(&[ids.len(), self.feat_dim], data)?)
    }

    /// Stacks the logit vectors for `ids` into an untracked `(n, logit_dim)`
    /// tensor. Errors if the store was written without logits.
    pub fn logits_tensor<T: Element>(
        &self,
        ids: &[impl AsRef<str>],
    ) -> Result<Tensor<T>, DataError> {
        let dim = self.logit_dim.ok_or_else(|| {
            DataError::InvalidArgument("store holds no logits".to_string())
        })?;
        let mut data = Vec::with_capacity(ids.len() * dim);
        for id in ids {
            let rec = self.lookup(id.as_ref())?;
            let logits = rec.logits.as_ref().expect("logit_dim implies logits");
            data.extend(logits.iter().map(|&v| T::from_f64(f64::from(v))));
        }
        Ok(Tensor::from_vec(&[ids.len(), dim], data)?)
    }
}

pub fn save_store(store: &TeacherStore, path: &Path) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, store.records.len() as u32);
    put_u32(&mut out, store.feat_dim as u32);
    out.push(u8::from(store.logit_dim.is_some()));
    put_u32(&mut out, store.logit_dim.unwrap_or(0) as u32);
    for rec in &store.records {
        put_u16(&mut out, rec.id.len() as u16);
        out.extend_from_slice(rec.id.as_bytes());
        put_f32s(&mut out, &rec.features);
        if let Some(logits) = &rec.logits {
            put_f32s(&mut out, logits);
        }
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn load_store(path: &Path) -> Result<TeacherStore, DataError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut cur = Cursor::new(&bytes, path);

    if cur.take(4, "store header")? != MAGIC {
        return Err(DataError::BadMagic {
            path: path.display().to_string(),
            expected: "GTEN",
        });
    }
    let version = cur.u32("store header")?;
    if version != VERSION {
        return Err(cur.bad_header(format!("unsupported version {version}")));
    }
    let count = cur.u32("store header")? as usize;
    let feat_dim = cur.u32("store header")? as usize;
    if feat_dim == 0 {
        return Err(cur.bad_header("feature dimension must be positive"));
    }
    let has_logits = match cur.u8("store header")? {
        0 => false,
        1 => true,
        v => return Err(cur.bad_header(format!("has_logits must be 0 or 1, got {v}"))),
    };
    let logit_dim = cur.u32("store header")? as usize;
    match (has_logits, logit_dim) {
        (false, d) if d != 0 => {
            return Err(cur.bad_header(format!("logit_dim must be 0 without logits, got {d}")))
        }
        (true, 0) => return Err(cur.bad_header("logit_dim must be positive with logits")),
        _ => {}
    }

    let mut store = TeacherStore::new(feat_dim, has_logits.then_some(logit_dim));
    for _ in 0..count {
        let id_len = cur.u16("record id")? as usize;
        let id = cur.utf8(id_len, "record id")?;
        let features = cur.f32_vec(feat_dim, "feature vector")?;
        let logits = if has_logits {
            Some(cur.f32_vec(logit_dim, "logit vector")?)
        } else {
            None
        };
        store.push(TeacherRecord { id, features, logits })?;
    }
    cur.finish()?;
    Ok(store)
}

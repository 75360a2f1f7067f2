//! Dataset manifests: a JSON array of `{id, path, label}` records. Image
//! paths are stored relative to the manifest file so a dataset directory can
//! be moved wholesale.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, DataError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub path: String,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
    num_classes: usize,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of distinct labels; labels are validated to be `0..num_classes`.
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Absolute (or manifest-relative) path of one record's image file.
    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&record.path)
    }
}

/// Loads and validates a manifest. Ids must be unique, labels must cover
/// `0..num_classes` contiguously, and every referenced image file must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let records: Vec<ManifestRecord> =
        serde_json::from_str(&text).map_err(|e| DataError::Json {
            path: path.display().to_string(),
            source: e,
        })?;

    let mut seen = HashSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(DataError::DuplicateId { id: r.id.clone() });
        }
    }

    let num_classes = match records.iter().map(|r| r.label).max() {
        Some(max) => max + 1,
        None => 0,
    };
    let mut present = vec![false; num_classes];
    for r in &records {
        present[r.label] = true;
    }
    if let Some(label) = present.iter().position(|p| !p) {
        return Err(DataError::NonContiguousLabels {
            expected: num_classes,
            label,
        });
    }

    let base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    for r in &records {
        let img = base_dir.join(&r.path);
        if !img.is_file() {
            return Err(DataError::MissingImage {
                path: img.display().to_string(),
            });
        }
    }

    Ok(Manifest {
        records,
        num_classes,
        base_dir,
    })
}

/// Writes records as pretty-printed JSON. Does not validate image existence,
/// so a manifest can be written before its images.
pub fn save_manifest(records: &[ManifestRecord], path: &Path) -> Result<(), DataError> {
    let mut text = serde_json::to_string_pretty(records).expect("records are serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_dummy_image(dir: &Path, name: &str) {
        crate::data::write_pgm(&dir.join(name), 2, 2, &[0, 64, 128, 255]).unwrap();
    }

    fn sample_records() -> Vec<ManifestRecord> {
        vec![
            ManifestRecord {
                id: "a".into(),
                path: "a.pgm".into(),
                label: 0,
            },
            ManifestRecord {
                id: "b".into(),
                path: "b.pgm".into(),
                label: 1,
            },
        ]
    }

    #[test]
    fn round_trip_preserves_records_and_counts_classes() {
        let dir = tempfile::tempdir().unwrap();
        write_dummy_image(dir.path(), "a.pgm");
        write_dummy_image(dir.path(), "b.pgm");
        let manifest_path = dir.path().join("manifest.json");
        save_manifest(&sample_records(), &manifest_path).unwrap();

        let m = load_manifest(&manifest_path).unwrap();
        assert_eq!(m.records(), sample_records().as_slice());
        assert_eq!(m.num_classes(), 2);
        assert!(m.image_path(&m.records()[0]).is_file());
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dummy_image(dir.path(), "a.pgm");
        let mut records = sample_records();
        records[1].id = "a".into();
        records[1].path = "a.pgm".into();
        records[1].label = 0;
        let manifest_path = dir.path().join("manifest.json");
        save_manifest(&records, &manifest_path).unwrap();
        assert!(matches!(
            load_manifest(&manifest_path),
            Err(DataError::DuplicateId { id }) if id == "a"
        ));
    }

    #[test]
    fn gap_in_labels_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dummy_image(dir.path(), "a.pgm");
        write_dummy_image(dir.path(), "b.pgm");
        let mut records = sample_records();
        records[1].label = 2; // labels {0, 2}: class 1 missing
        let manifest_path = dir.path().join("manifest.json");
        save_manifest(&records, &manifest_path).unwrap();
        assert!(matches!(
            load_manifest(&manifest_path),
            Err(DataError::NonContiguousLabels { expected: 3, label: 1 })
        ));
    }

    #[test]
    fn missing_image_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_dummy_image(dir.path(), "a.pgm");
        // b.pgm deliberately not written.
        let manifest_path = dir.path().join("manifest.json");
        save_manifest(&sample_records(), &manifest_path).unwrap();
        assert!(matches!(
            load_manifest(&manifest_path),
            Err(DataError::MissingImage { .. })
        ));
    }

    #[test]
    fn malformed_json_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = dir.path().join("manifest.json");
        std::fs::write(&manifest_path, "[{\"id\": \"a\"").unwrap();
        assert!(matches!(
            load_manifest(&manifest_path),
            Err(DataError::Json { .. })
        ));
    }
}

//! Loader robustness: every binary reader must return a structured error on
//! malformed input — never panic, never allocate unbounded buffers — across
//! tens of thousands of fuzzed files.
//!
//! Strategies per case: pure random bytes, random byte flips in a valid file,
//! truncation, trailing garbage, and targeted overwrites of early header
//! fields (where counts and lengths live).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gdrd_core::data::{
    load_checkpoint, load_store, read_pgm, save_checkpoint, save_store, write_pgm, Checkpoint,
    CheckpointMeta, TeacherRecord, TeacherStore, STAGE_BACKBONE,
};
use gdrd_core::config::{ModelConfig, RunConfig};
use gdrd_core::model::StudentModel;

fn valid_store_bytes(dir: &Path) -> Vec<u8> {
    let mut store = TeacherStore::new(4, Some(3));
    for (i, id) in ["a", "b", "c"].iter().enumerate() {
        let base = i as f32;
        store
            .push(TeacherRecord {
                id: (*id).to_string(),
                features: vec![base, base + 0.5, -base, 1.0],
                logits: Some(vec![base, 0.0, -1.0]),
            })
            .unwrap();
    }
    let path = dir.join("seed.gten");
    save_store(&store, &path).unwrap();
    std::fs::read(&path).unwrap()
}

fn valid_checkpoint_bytes(dir: &Path) -> Vec<u8> {
    let cfg = ModelConfig {
        input_side: 8,
        input_channels: 1,
        conv_channels: vec![2, 3],
        feature_dim: 4,
        embed_dim: 5,
        relation_hidden: 4,
        relation_dim: 3,
        proj_dim: 2,
    };
    let model = StudentModel::<f32>::new(&cfg, 3, 7).unwrap();
    let run = RunConfig {
        model: cfg,
        ..RunConfig::default()
    };
    let meta = CheckpointMeta {
        stage: STAGE_BACKBONE,
        epoch: 1,
        seed: 7,
        model_config_hash: run.model_config_hash(),
        payload_hash: String::new(),
    };
    let path = dir.join("seed.gckp");
    save_checkpoint(&Checkpoint::from_model(&model, meta), &path).unwrap();
    std::fs::read(&path).unwrap()
}

fn valid_pgm_bytes(dir: &Path) -> Vec<u8> {
    let pixels: Vec<u8> = (0..20u8).map(|p| p * 12).collect();
    let path = dir.join("seed.pgm");
    write_pgm(&path, 5, 4, &pixels).unwrap();
    std::fs::read(&path).unwrap()
}

/// Produces one fuzzed variant of `valid`.
fn mutate(rng: &mut ChaCha8Rng, valid: &[u8]) -> Vec<u8> {
    match rng.gen_range(0..5u8) {
        // Pure noise, arbitrary length.
        0 => {
            let len = rng.gen_range(0..512usize);
            (0..len).map(|_| rng.gen()).collect()
        }
        // Flip a handful of bytes anywhere.
        1 => {
            let mut bytes = valid.to_vec();
            for _ in 0..rng.gen_range(1..=8usize) {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] = rng.gen();
            }
            bytes
        }
        // Truncate.
        2 => {
            let cut = rng.gen_range(0..=valid.len());
            valid[..cut].to_vec()
        }
        // Trailing garbage.
        3 => {
            let mut bytes = valid.to_vec();
            let extra = rng.gen_range(1..=64usize);
            bytes.extend((0..extra).map(|_| rng.gen::<u8>()));
            bytes
        }
        // Smash an early header field with a random u32 — this is where
        // counts and lengths live, the classic allocation-bomb vector.
        _ => {
            let mut bytes = valid.to_vec();
            let offset = rng.gen_range(0..16.min(bytes.len().saturating_sub(4)).max(1));
            let raw: u32 = rng.gen();
            for (k, b) in raw.to_le_bytes().iter().enumerate() {
                if offset + k < bytes.len() {
                    bytes[offset + k] = *b;
                }
            }
            bytes
        }
    }
}

fn fuzz_loader<L, O, E>(
    valid: &[u8],
    path: &Path,
    cases: usize,
    seed: u64,
    load: L,
    on_accept: impl Fn(&O),
) -> (usize, usize)
where
    L: Fn(&Path) -> Result<O, E>,
    E: std::fmt::Display,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ok, mut rejected) = (0usize, 0usize);
    for _ in 0..cases {
        let bytes = mutate(&mut rng, valid);
        std::fs::write(path, &bytes).unwrap();
        match load(path) {
            Ok(value) => {
                on_accept(&value);
                ok += 1;
            }
            Err(e) => {
                assert!(!e.to_string().is_empty(), "error must carry a message");
                rejected += 1;
            }
        }
    }
    (ok, rejected)
}

#[test]
fn teacher_store_loader_survives_fuzzing() {
    let dir = tempfile::tempdir().unwrap();
    let valid = valid_store_bytes(dir.path());
    let target = dir.path().join("fuzz.gten");
    let (ok, rejected) = fuzz_loader(&valid, &target, 4000, 11, |p| load_store(p), |_| {});
    assert_eq!(ok + rejected, 4000);
    // Byte flips in float payloads can still parse; header damage must not.
    assert!(rejected > 3000, "only {rejected} rejections: checks too lax?");
}

#[test]
fn checkpoint_loader_survives_fuzzing() {
    let dir = tempfile::tempdir().unwrap();
    let valid = valid_checkpoint_bytes(dir.path());
    let seed_path = dir.path().join("seed.gckp");
    let original = load_checkpoint(&seed_path).unwrap();
    let target = dir.path().join("fuzz.gckp");
    let (ok, rejected) = fuzz_loader(
        &valid,
        &target,
        4000,
        12,
        |p| load_checkpoint(p),
        // The content hash covers the tensor section, so the only mutations
        // that can parse are flips inside the metadata JSON: the parameter
        // payload of anything accepted must still be bit-identical.
        |loaded: &Checkpoint| {
            assert_eq!(loaded.tensors.len(), original.tensors.len());
            for (a, b) in loaded.tensors.iter().zip(&original.tensors) {
                assert_eq!(a.name, b.name);
                assert_eq!(a.dims, b.dims);
                let a_bits: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
                let b_bits: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
                assert_eq!(a_bits, b_bits, "tensor {} changed yet loaded", a.name);
            }
        },
    );
    assert_eq!(ok + rejected, 4000);
    assert!(rejected > 3900, "only {rejected} rejections: checks too lax?");
}

#[test]
fn pgm_reader_survives_fuzzing() {
    let dir = tempfile::tempdir().unwrap();
    let valid = valid_pgm_bytes(dir.path());
    let target = dir.path().join("fuzz.pgm");
    let (ok, rejected) = fuzz_loader(&valid, &target, 2500, 13, |p| read_pgm(p), |_| {});
    assert_eq!(ok + rejected, 2500);
    assert!(rejected > 1500, "only {rejected} rejections: checks too lax?");
}

#[test]
fn empty_and_tiny_files_are_rejected_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for (name, len) in [("empty", 0usize), ("one", 1), ("three", 3), ("magic", 4)] {
        let path = dir.path().join(name);
        std::fs::write(&path, vec![0x47u8; len]).unwrap();
        assert!(load_store(&path).is_err());
        assert!(load_checkpoint(&path).is_err());
        assert!(read_pgm(&path).is_err());
    }
}

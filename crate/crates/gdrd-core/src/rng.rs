//! Seeded random streams.
//!
//! Every source of randomness in the crate draws from a ChaCha8 generator
//! keyed by the run seed and a fixed stream id, so changing how many numbers
//! one consumer draws never shifts the values another consumer sees. Stream
//! ids are listed here in one place to keep them from colliding.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Model parameter initialisation.
pub const STREAM_MODEL_INIT: u64 = 1;
/// Batch shuffling during backbone training.
pub const STREAM_STAGE1_BATCHES: u64 = 2;
/// Batch shuffling during head/relation training.
pub const STREAM_STAGE2_BATCHES: u64 = 3;
/// Positive/negative pair sampling for the contrastive loss.
pub const STREAM_PAIR_SAMPLING: u64 = 4;
/// Synthetic dataset: class template construction.
pub const STREAM_SYNTH_TEMPLATES: u64 = 5;
/// Synthetic dataset: per-sample jitter and pixel noise.
pub const STREAM_SYNTH_SAMPLES: u64 = 6;
/// Synthetic dataset: teacher embedding and logit noise.
pub const STREAM_SYNTH_TEACHERS: u64 = 7;
/// Verification pair list construction during evaluation.
pub const STREAM_EVAL_PAIRS: u64 = 8;
/// Classifier-probe initialisation during identification finetuning.
pub const STREAM_IDENTIFY_INIT: u64 = 9;

/// A deterministic generator for (`seed`, `stream`).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

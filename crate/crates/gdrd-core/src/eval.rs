//! Evaluation protocols over student embeddings: pairwise verification with
//! an exact optimal-threshold sweep, 1:N retrieval, and identification by
//! finetuning a fresh final linear layer on frozen embeddings.
//!
//! All similarity computation uses cosine similarity evaluated in `f64`.
//! Every protocol is a pure function of its inputs; determinism follows from
//! the deterministic forward pass and the seeded pair sampling.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::DataError;
use crate::losses::{ce_loss, LossError};
use crate::model::{LinearLayer, ModelError, StudentModel};
use crate::rng::{stream_rng, STREAM_IDENTIFY_INIT};
use crate::tensor::{Tensor, TensorError};
use crate::train::{epoch_batches, Dataset, Sgd, TrainError};
use crate::Element;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("embedding of {id:?} has zero norm; cosine similarity is undefined")]
    ZeroNormEmbedding { id: String },
    #[error("no embedding for id {id:?}")]
    UnknownId { id: String },
    #[error("verification set needs at least one positive and one negative pair")]
    DegeneratePairs,
    #[error("rank {rank} exceeds gallery size {gallery}")]
    RankTooLarge { rank: usize, gallery: usize },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error(
        "requested {requested_pos} positive / {requested_neg} negative pairs, \
         but only {max_pos} / {max_neg} distinct pairs exist"
    )]
    InsufficientPairs {
        requested_pos: usize,
        requested_neg: usize,
        max_pos: usize,
        max_neg: usize,
    },
    #[error("class {label} appears in the test split but not in training")]
    TestClassMissing { label: usize },
    #[error("embedding sets have different widths: {left} vs {right}")]
    EmbeddingDimMismatch { left: usize, right: usize },
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
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

/// A labeled table of embeddings with stable row order and id lookup.
#[derive(Debug, Clone)]
pub struct Embeddings {
    ids: Vec<String>,
    labels: Vec<usize>,
    dim: usize,
    rows: Vec<f64>,
    index: HashMap<String, usize>,
}

impl Embeddings {
    pub fn from_rows(
        ids: Vec<String>,
        labels: Vec<usize>,
        dim: usize,
        rows: Vec<f64>,
    ) -> Result<Self, EvalError> {
        assert_eq!(ids.len(), labels.len());
        assert_eq!(rows.len(), ids.len() * dim);
        let mut index = HashMap::new();
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(EvalError::Data(DataError::DuplicateId { id: id.clone() }));
            }
        }
        Ok(Embeddings {
            ids,
            labels,
            dim,
            rows,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Result<&[f64], EvalError> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| EvalError::UnknownId { id: id.to_string() })?;
        Ok(self.row(i))
    }
}

/// Cosine similarity; errors (by id) on a zero-norm vector.
fn cosine(a: &[f64], b: &[f64], id_a: &str, id_b: &str) -> Result<f64, EvalError> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 {
        return Err(EvalError::ZeroNormEmbedding {
            id: id_a.to_string(),
        });
    }
    if nb == 0.0 {
        return Err(EvalError::ZeroNormEmbedding {
            id: id_b.to_string(),
        });
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Runs the model over a whole dataset and returns one embedding per sample,
/// detached from the autograd graph. Rows keep the dataset's order.
pub fn embed_all<T: Element>(
    model: &StudentModel<T>,
    dataset: &Dataset<T>,
    batch_size: usize,
) -> Result<Embeddings, EvalError> {
    let dim = model.config.embed_dim;
    let mut rows = Vec::with_capacity(dataset.len() * dim);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = dataset.batch(chunk)?;
        let embedding = model.embed(&x)?;
        rows.extend(embedding.data().iter().map(|v| v.as_f64()));
    }
    Embeddings::from_rows(dataset.ids.clone(), dataset.labels.clone(), dim, rows)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankAccuracy {
    pub rank: usize,
    pub accuracy: f64,
}

/// The JSON-serializable outcome of one protocol run. `accuracy` holds the
/// protocol's headline number (for retrieval, the smallest requested rank).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub protocol: String,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_rank: Option<Vec<RankAccuracy>>,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut text = serde_json::to_string_pretty(self).expect("report is serializable");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Json {
            path: path.display().to_string(),
            source: e,
        })
    }
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPair {
    pub id_a: String,
    pub id_b: String,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSet {
    pub pairs: Vec<VerificationPair>,
}

impl VerificationSet {
    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        let mut text = serde_json::to_string_pretty(self).expect("pairs are serializable");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| EvalError::Json {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Samples a verification protocol: `n_pos` same-class and `n_neg`
/// cross-class unordered pairs, without replacement, no self-pairs. Errors
/// when the request exceeds what the label distribution allows, reporting
/// the achievable maxima.
pub fn build_pairs(
    ids: &[String],
    labels: &[usize],
    n_pos: usize,
    n_neg: usize,
    rng: &mut ChaCha8Rng,
) -> Result<VerificationSet, EvalError> {
    assert_eq!(ids.len(), labels.len());
    let n = ids.len();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    if n_pos > positives.len() || n_neg > negatives.len() {
        return Err(EvalError::InsufficientPairs {
            requested_pos: n_pos,
            requested_neg: n_neg,
            max_pos: positives.len(),
            max_neg: negatives.len(),
        });
    }

    let mut pairs = Vec::with_capacity(n_pos + n_neg);
    for (pool, count, same) in [(&positives, n_pos, true), (&negatives, n_neg, false)] {
        let picks = rand::seq::index::sample(rng, pool.len(), count);
        let mut chosen: Vec<(usize, usize)> = picks.iter().map(|k| pool[k]).collect();
        chosen.sort_unstable();
        for (i, j) in chosen {
            pairs.push(VerificationPair {
                id_a: ids[i].clone(),
                id_b: ids[j].clone(),
                same,
            });
        }
    }
    Ok(VerificationSet { pairs })
}

/// Verification with an exact optimal threshold: candidate thresholds are
/// the midpoints of adjacent distinct similarities plus one sentinel past
/// each end, which exhausts every achievable labeling of the pairs. A pair
/// is predicted "same" iff its similarity is >= the threshold. On accuracy
/// ties the lowest candidate threshold is reported.
pub fn verify(embeddings: &Embeddings, set: &VerificationSet) -> Result<MetricsReport, EvalError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for pair in &set.pairs {
        let a = embeddings.get(&pair.id_a)?;
        let b = embeddings.get(&pair.id_b)?;
        let sim = cosine(a, b, &pair.id_a, &pair.id_b)?;
        if pair.same {
            pos.push(sim);
        } else {
            neg.push(sim);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::DegeneratePairs);
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);

    let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut candidates = Vec::with_capacity(all.len() + 1);
    candidates.push(all[0] - 1.0);
    for w in all.windows(2) {
        candidates.push(0.5 * (w[0] + w[1]));
    }
    candidates.push(all[all.len() - 1] + 1.0);

    let total = (pos.len() + neg.len()) as f64;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_threshold = candidates[0];
    for &t in &candidates {
        // Correct positives: sim >= t. Correct negatives: sim < t.
        let pos_correct = pos.len() - pos.partition_point(|&s| s < t);
        let neg_correct = neg.partition_point(|&s| s < t);
        let acc = (pos_correct + neg_correct) as f64 / total;
        if acc > best_acc {
            best_acc = acc;
            best_threshold = t;
        }
    }

    let mut counts = BTreeMap::new();
    counts.insert("positive_pairs".to_string(), pos.len());
    counts.insert("negative_pairs".to_string(), neg.len());
    Ok(MetricsReport {
        protocol: "verification".to_string(),
        accuracy: best_acc,
        threshold: Some(best_threshold),
        per_rank: None,
        counts,
        metadata: BTreeMap::new(),
    })
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

/// 1:N retrieval. Per probe the gallery is ordered by descending cosine
/// similarity with ties broken by ascending gallery index; a rank-k hit
/// means some top-k entry shares the probe's label.
pub fn retrieve(
    gallery: &Embeddings,
    probes: &Embeddings,
    ranks: &[usize],
) -> Result<MetricsReport, EvalError> {
    if gallery.is_empty() {
        return Err(EvalError::EmptyGallery);
    }
    if gallery.dim() != probes.dim() {
        return Err(EvalError::EmbeddingDimMismatch {
            left: gallery.dim(),
            right: probes.dim(),
        });
    }
    for &rank in ranks {
        if rank == 0 || rank > gallery.len() {
            return Err(EvalError::RankTooLarge {
                rank,
                gallery: gallery.len(),
            });
        }
    }
    let mut sorted_ranks: Vec<usize> = ranks.to_vec();
    sorted_ranks.sort_unstable();
    sorted_ranks.dedup();

    let mut hits = vec![0usize; sorted_ranks.len()];
    for p in 0..probes.len() {
        let probe_row = probes.row(p);
        let mut order: Vec<(usize, f64)> = Vec::with_capacity(gallery.len());
        for g in 0..gallery.len() {
            let sim = cosine(
                probe_row,
                gallery.row(g),
                &probes.ids()[p],
                &gallery.ids()[g],
            )?;
            order.push((g, sim));
        }
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let label = probes.labels()[p];
        // Index into `order` of the best-ranked same-label gallery entry.
        let first_match = order
            .iter()
            .position(|&(g, _)| gallery.labels()[g] == label);
        for (slot, &rank) in sorted_ranks.iter().enumerate() {
            if first_match.map_or(false, |m| m < rank) {
                hits[slot] += 1;
            }
        }
    }

    let per_rank: Vec<RankAccuracy> = sorted_ranks
        .iter()
        .zip(&hits)
        .map(|(&rank, &h)| RankAccuracy {
            rank,
            accuracy: h as f64 / probes.len().max(1) as f64,
        })
        .collect();
    let mut counts = BTreeMap::new();
    counts.insert("gallery".to_string(), gallery.len());
    counts.insert("probes".to_string(), probes.len());
    Ok(MetricsReport {
        protocol: "retrieval".to_string(),
        accuracy: per_rank.first().map_or(0.0, |r| r.accuracy),
        threshold: None,
        per_rank: Some(per_rank),
        counts,
        metadata: BTreeMap::new(),
    })
}

// ---------------------------------------------------------------------------
// Identification by final-layer finetuning
// ---------------------------------------------------------------------------

/// Trains a fresh `(embed_dim -> k)` linear classifier on frozen training
/// embeddings and reports top-1 accuracy on the test embeddings. The
/// classifier's init and batch order consume the identification stream of
/// the run seed; everything upstream of the logits stays untouched.
pub fn identify_on_embeddings(
    train: &Embeddings,
    test: &Embeddings,
    cfg: &RunConfig,
) -> Result<MetricsReport, EvalError> {
    if train.dim() != test.dim() {
        return Err(EvalError::EmbeddingDimMismatch {
            left: train.dim(),
            right: test.dim(),
        });
    }
    let train_classes: HashSet<usize> = train.labels().iter().copied().collect();
    for &label in test.labels() {
        if !train_classes.contains(&label) {
            return Err(EvalError::TestClassMissing { label });
        }
    }
    let k = train.labels().iter().max().map_or(0, |&m| m + 1);
    let dim = train.dim();

    let mut rng = stream_rng(cfg.optim.seed, STREAM_IDENTIFY_INIT);
    let mut layer: LinearLayer<f64> = LinearLayer::init(&mut rng, dim, k);
    let mut sgd = Sgd::new(cfg.optim.momentum);

    let batch_size = cfg.optim.batch_size.min(train.len());
    for _epoch in 0..cfg.finetune_epochs {
        let batches = epoch_batches(train.labels(), batch_size, false, &mut rng)?;
        for batch in &batches {
            let mut rows = Vec::with_capacity(batch.len() * dim);
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.extend_from_slice(train.row(i));
                labels.push(train.labels()[i]);
            }
            let x = Tensor::from_vec(&[batch.len(), dim], rows)?;
            let logits = layer.forward(&x)?;
            let loss = ce_loss(&logits, &labels)?;
            loss.backward()?;
            layer.w = sgd.update("identify.weight", &layer.w, cfg.finetune_lr)?;
            layer.b = sgd.update("identify.bias", &layer.b, cfg.finetune_lr)?;
        }
    }

    let mut correct = 0usize;
    for i in 0..test.len() {
        let x = Tensor::from_vec(&[1, dim], test.row(i).to_vec())?;
        let logits = layer.forward(&x)?;
        let data = logits.data();
        let mut best = 0usize;
        for c in 1..k {
            if data[c] > data[best] {
                best = c;
            }
        }
        if best == test.labels()[i] {
            correct += 1;
        }
    }

    let mut counts = BTreeMap::new();
    counts.insert("classes".to_string(), k);
    counts.insert("train".to_string(), train.len());
    counts.insert("test".to_string(), test.len());
    Ok(MetricsReport {
        protocol: "identification".to_string(),
        accuracy: correct as f64 / test.len().max(1) as f64,
        threshold: None,
        per_rank: None,
        counts,
        metadata: BTreeMap::new(),
    })
}

/// Model-level wrapper: embeds both splits with the (frozen) model, then
/// runs [`identify_on_embeddings`]. The model itself is never modified.
pub fn identify_finetune<T: Element>(
    model: &StudentModel<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    cfg: &RunConfig,
) -> Result<MetricsReport, EvalError> {
    let train_emb = embed_all(model, train, cfg.optim.batch_size)?;
    let test_emb = embed_all(model, test, cfg.optim.batch_size)?;
    identify_on_embeddings(&train_emb, &test_emb, cfg)
}

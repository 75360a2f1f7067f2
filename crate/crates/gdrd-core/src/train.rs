//! Two-stage module-wise training.
//!
//! Stage 1 fits the backbone alone by regressing its features onto the
//! generative teacher's per-sample features. Stage 2 freezes the backbone
//! bit-exactly and trains the head, both relation modules, and both
//! projections against the composite head loss (classification + logit
//! distillation + relational contrastive distillation, each switchable).
//!
//! Every run is deterministic given (config, seed, data): batch shuffles,
//! pair draws, and parameter initialization each consume their own fixed
//! random stream, and the forward/backward kernels are bit-stable across
//! thread counts.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{OptimConfig, RunConfig};
use crate::data::{
    load_image, save_checkpoint, Checkpoint, CheckpointMeta, DataError, Manifest, TeacherStore,
    STAGE_BACKBONE, STAGE_HEAD,
};
use crate::losses::{
    ce_loss, dis_loss, gather_rows, gen_loss, kd_loss, rcd_loss, sample_pairs, LossError,
};
use crate::model::{ModelError, StudentModel};
use crate::rng::{
    stream_rng, STREAM_PAIR_SAMPLING, STREAM_STAGE1_BATCHES, STREAM_STAGE2_BATCHES,
};
use crate::tensor::{Tensor, TensorError};
use crate::Element;

/// Density-ratio prior of the contrastive critic: one positive for every
/// two candidate pairs.
const RCD_PRIOR: (usize, usize) = (1, 2);

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss at stage {stage} epoch {epoch} step {step}")]
    NonFiniteLoss { stage: u32, epoch: usize, step: usize },
    #[error("batch size {batch_size} exceeds dataset size {dataset}")]
    BatchTooLarge { batch_size: usize, dataset: usize },
    #[error("class-balanced batching is impossible: it needs two classes and a class with two samples")]
    BalanceImpossible,
    #[error("could not arrange both a repeated class and a second class in every batch (batch {batch})")]
    BalanceFailed { batch: usize },
    #[error("expected a stage-{expected} checkpoint, got stage {got}")]
    WrongStage { expected: u32, got: u32 },
    #[error("frozen backbone parameter {param} changed during stage 2")]
    FrozenBackboneChanged { param: String },
    #[error("teacher store feature dimension {got} does not match the model ({expected})")]
    TeacherDim { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> TrainError {
    TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// SGD with classical momentum. Velocity is kept per parameter name in
/// `f64` and updates are applied functionally: each step produces fresh
/// parameter leaves so stale gradients can never leak across steps.
pub struct Sgd {
    momentum: f64,
    velocity: HashMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: HashMap::new(),
        }
    }

    /// `v <- momentum*v + g; p <- p - lr*v`. A parameter absent from the
    /// current graph contributes zero gradient. Non-finite gradients abort
    /// with the parameter's name.
    pub fn update<T: Element>(
        &mut self,
        name: &str,
        param: &Tensor<T>,
        lr: f64,
    ) -> Result<Tensor<T>, TrainError> {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.len()]);
        let grad = param.grad();
        let mut next = Vec::with_capacity(param.len());
        for (i, p) in param.data().iter().enumerate() {
            let g = match &grad {
                Some(g) => {
                    let g = g[i].as_f64();
                    if !g.is_finite() {
                        return Err(TrainError::NonFiniteGradient {
                            param: name.to_string(),
                        });
                    }
                    g
                }
                None => 0.0,
            };
            v[i] = self.momentum * v[i] + g;
            next.push(T::from_f64(p.as_f64() - lr * v[i]));
        }
        Ok(Tensor::param(param.shape(), next)?)
    }

    /// Updates the named parameters of a model in the given order.
    pub fn step<T: Element>(
        &mut self,
        model: &mut StudentModel<T>,
        names: &[String],
        lr: f64,
    ) -> Result<(), TrainError> {
        let params: HashMap<String, Tensor<T>> = model.named_params().into_iter().collect();
        for name in names {
            let param = params
                .get(name)
                .ok_or_else(|| ModelError::UnknownParam { name: name.clone() })?;
            let next = self.update(name, param, lr)?;
            model.set_param(name, next)?;
        }
        Ok(())
    }
}

/// Multi-step schedule: the base rate is multiplied by the annealing factor
/// once per milestone already passed. Milestones are fractions of the
/// stage's epoch budget, mapped to epoch `floor(fraction * epochs)`.
pub fn lr_at(optim: &OptimConfig, stage_epochs: usize, epoch: usize) -> f64 {
    let passed = optim
        .milestones
        .iter()
        .filter(|&&f| epoch >= (f * stage_epochs as f64).floor() as usize)
        .count();
    optim.lr0 * optim.anneal.powi(passed as i32)
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// One epoch's batches: a seeded shuffle chunked to `batch_size`, with a
/// trailing singleton merged into the previous batch. In balanced mode the
/// shuffle is class-blocked, short tails (< 3 samples) are merged, and the
/// batches are then repaired so every one contains both a repeated class
/// and a second class — the pair sampler needs a positive and a negative
/// pair in every batch.
pub fn epoch_batches(
    labels: &[usize],
    batch_size: usize,
    balanced: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>, TrainError> {
    let n = labels.len();
    if batch_size == 0 || batch_size > n {
        return Err(TrainError::BatchTooLarge {
            batch_size,
            dataset: n,
        });
    }

    let order: Vec<usize> = if balanced {
        let classes = labels.iter().max().map_or(0, |&m| m + 1);
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); classes];
        for (i, &label) in labels.iter().enumerate() {
            groups[label].push(i);
        }
        groups.retain(|g| !g.is_empty());
        if groups.len() < 2 || groups.iter().all(|g| g.len() < 2) {
            return Err(TrainError::BalanceImpossible);
        }
        for g in &mut groups {
            g.shuffle(rng);
        }
        groups.shuffle(rng);
        groups.concat()
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        idx
    };

    // A trailing batch below this size is merged into its predecessor. A
    // lone sample is useless in any mode; a pairable batch needs at least 3.
    let min_tail = if balanced { 3 } else { 2 };
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().map_or(false, |b| b.len() < min_tail) {
        let tail = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("len >= 2").extend(tail);
    }

    if balanced {
        repair_balance(&mut batches, labels)?;
    }
    Ok(batches)
}

/// Swaps elements between batches until each batch is pairable, preserving
/// batch sizes. The class-blocked layout leaves at most a few boundary
/// violations, so this almost never runs more than a step or two.
fn repair_balance(batches: &mut [Vec<usize>], labels: &[usize]) -> Result<(), TrainError> {
    for i in 0..batches.len() {
        if batch_pairable(&batches[i], labels) {
            continue;
        }
        if !try_repair(batches, labels, i) {
            return Err(TrainError::BalanceFailed { batch: i });
        }
    }
    Ok(())
}

fn batch_has_repeat(batch: &[usize], labels: &[usize]) -> bool {
    let mut seen = std::collections::HashSet::new();
    batch.iter().any(|&i| !seen.insert(labels[i]))
}

fn batch_has_two_classes(batch: &[usize], labels: &[usize]) -> bool {
    batch
        .first()
        .map_or(false, |&first| batch.iter().any(|&i| labels[i] != labels[first]))
}

/// Whether the pair sampler can draw both a positive and a negative pair.
fn batch_pairable(batch: &[usize], labels: &[usize]) -> bool {
    batch_has_repeat(batch, labels) && batch_has_two_classes(batch, labels)
}

fn try_repair(batches: &mut [Vec<usize>], labels: &[usize], i: usize) -> bool {
    for j in 0..batches.len() {
        if j == i {
            continue;
        }
        for pj in 0..batches[j].len() {
            for pi in 0..batches[i].len() {
                let ours = batches[i][pi];
                let theirs = batches[j][pj];
                batches[i][pi] = theirs;
                batches[j][pj] = ours;
                if batch_pairable(&batches[i], labels) && batch_pairable(&batches[j], labels) {
                    return true;
                }
                batches[i][pi] = ours;
                batches[j][pj] = theirs;
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// All images of a manifest, degraded to the model's input resolution and
/// held in memory as one flat row-major block.
pub struct Dataset<T: Element> {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    flat: Vec<T>,
    channels: usize,
    side: usize,
}

impl<T: Element> Dataset<T> {
    /// Loads every manifest image, box-averaging any image larger than
    /// `input_side` down to it. Images already at `input_side` pass through.
    pub fn load(manifest: &Manifest, input_side: usize) -> Result<Self, TrainError> {
        let mut ids = Vec::with_capacity(manifest.len());
        let mut labels = Vec::with_capacity(manifest.len());
        let mut flat = Vec::with_capacity(manifest.len() * input_side * input_side);
        let mut channels = 1;
        for record in manifest.records() {
            let hr: Tensor<T> = load_image(&manifest.image_path(record))?;
            let lr = if hr.shape()[1] == input_side && hr.shape()[2] == input_side {
                hr
            } else {
                crate::data::degrade(&hr, input_side)?
            };
            channels = lr.shape()[0];
            flat.extend_from_slice(lr.data());
            ids.push(record.id.clone());
            labels.push(record.label);
        }
        Ok(Dataset {
            ids,
            labels,
            flat,
            channels,
            side: input_side,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&m| m + 1)
    }

    /// Stacks the given samples into an untracked `(batch, c, side, side)`
    /// input tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>, TrainError> {
        let sample = self.channels * self.side * self.side;
        let mut data = Vec::with_capacity(indices.len() * sample);
        for &i in indices {
            data.extend_from_slice(&self.flat[i * sample..(i + 1) * sample]);
        }
        Ok(Tensor::from_vec(
            &[indices.len(), self.channels, self.side, self.side],
            data,
        )?)
    }

    pub fn ids_for(&self, indices: &[usize]) -> Vec<String> {
        indices.iter().map(|&i| self.ids[i].clone()).collect()
    }

    pub fn labels_for(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

/// One line of the training log (JSON lines). Disabled loss components are
/// logged as 0.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LogRecord {
    pub stage: u32,
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub l_gen: f64,
    pub l_cls: f64,
    pub l_kd: f64,
    pub l_rcd: f64,
    pub l_dis: f64,
    pub rcd_clamped: u64,
}

struct LogWriter {
    file: std::io::BufWriter<std::fs::File>,
    path: PathBuf,
}

impl LogWriter {
    fn create(path: &Path) -> Result<Self, TrainError> {
        let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
        Ok(LogWriter {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, record: &LogRecord) -> Result<(), TrainError> {
        let line = serde_json::to_string(record).expect("log record is serializable");
        writeln!(self.file, "{line}").map_err(|e| io_err(&self.path, e))
    }

    fn finish(mut self) -> Result<(), TrainError> {
        self.file.flush().map_err(|e| io_err(&self.path, e))
    }
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

/// Outcome of one training stage: the model, its checkpoint (also written
/// to disk), and the epoch-mean composite loss of the first and last epoch.
pub struct StageResult<T: Element> {
    pub model: StudentModel<T>,
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
}

/// Trains the backbone alone against the generative teacher's features;
/// labels and head parameters are untouched.
pub fn train_stage1<T: Element>(
    cfg: &RunConfig,
    dataset: &Dataset<T>,
    gen_store: &TeacherStore,
    out_dir: &Path,
) -> Result<StageResult<T>, TrainError> {
    if gen_store.feat_dim() != cfg.model.feature_dim {
        return Err(TrainError::TeacherDim {
            expected: cfg.model.feature_dim,
            got: gen_store.feat_dim(),
        });
    }
    for id in &dataset.ids {
        gen_store.lookup(id)?;
    }

    let mut model = StudentModel::<T>::new(&cfg.model, dataset.num_classes(), cfg.optim.seed)?;
    let trainable = model.backbone_param_names();
    let mut sgd = Sgd::new(cfg.optim.momentum);
    let mut rng = stream_rng(cfg.optim.seed, STREAM_STAGE1_BATCHES);

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let log_path = out_dir.join("stage1_log.jsonl");
    let mut log = LogWriter::create(&log_path)?;

    let epochs = cfg.optim.epochs_stage1;
    let mut first_epoch_loss = 0.0;
    let mut last_epoch_loss = 0.0;
    for epoch in 0..epochs {
        let lr = lr_at(&cfg.optim, epochs, epoch);
        let batches = epoch_batches(&dataset.labels, cfg.optim.batch_size, false, &mut rng)?;
        let mut epoch_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let x = dataset.batch(batch)?;
            let ids = dataset.ids_for(batch);
            let targets: Tensor<T> = gen_store.features_tensor(&ids)?;
            let features = model.backbone.forward(&x)?;
            let loss = gen_loss(&features, &targets)?;
            let value = loss.item()?.as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage: STAGE_BACKBONE,
                    epoch,
                    step,
                });
            }
            loss.backward()?;
            sgd.step(&mut model, &trainable, lr)?;
            epoch_sum += value;
            log.write(&LogRecord {
                stage: STAGE_BACKBONE,
                epoch,
                step,
                lr,
                l_gen: value,
                l_cls: 0.0,
                l_kd: 0.0,
                l_rcd: 0.0,
                l_dis: 0.0,
                rcd_clamped: 0,
            })?;
        }
        let mean = epoch_sum / batches.len() as f64;
        if epoch == 0 {
            first_epoch_loss = mean;
        }
        last_epoch_loss = mean;
    }
    log.finish()?;

    let checkpoint = Checkpoint::from_model(
        &model,
        CheckpointMeta {
            stage: STAGE_BACKBONE,
            epoch: epochs as u32,
            seed: cfg.optim.seed,
            model_config_hash: cfg.model_config_hash(),
            payload_hash: String::new(),
        },
    );
    let checkpoint_path = out_dir.join("stage1.gckp");
    save_checkpoint(&checkpoint, &checkpoint_path)?;

    Ok(StageResult {
        model,
        checkpoint,
        checkpoint_path,
        log_path,
        first_epoch_loss,
        last_epoch_loss,
    })
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

/// Trains the head, relation modules, and projections with the backbone
/// frozen. `stage1` carries the stage-1 checkpoint; `None` starts from the
/// seed initialization instead (the distillation-only ablation arm).
/// The loss switches in `cfg.losses` select the active components.
pub fn train_stage2<T: Element>(
    cfg: &RunConfig,
    dataset: &Dataset<T>,
    disc_store: &TeacherStore,
    stage1: Option<&Checkpoint>,
    out_dir: &Path,
) -> Result<StageResult<T>, TrainError> {
    if disc_store.feat_dim() != cfg.model.embed_dim {
        return Err(TrainError::TeacherDim {
            expected: cfg.model.embed_dim,
            got: disc_store.feat_dim(),
        });
    }
    for id in &dataset.ids {
        disc_store.lookup(id)?;
    }

    let mut model = StudentModel::<T>::new(&cfg.model, dataset.num_classes(), cfg.optim.seed)?;
    if let Some(ckpt) = stage1 {
        if ckpt.meta.stage != STAGE_BACKBONE {
            return Err(TrainError::WrongStage {
                expected: STAGE_BACKBONE,
                got: ckpt.meta.stage,
            });
        }
        ckpt.expect_model_hash(&cfg.model_config_hash())?;
        ckpt.apply_to_model(&mut model)?;
    }
    model.freeze_backbone()?;

    // Bits of every backbone parameter, for the end-of-stage freeze audit.
    let backbone_bits: Vec<(String, Vec<u64>)> = backbone_snapshot(&model);

    // With the backbone frozen its features are constants; compute them once.
    let features_all = precompute_features(&model, dataset, cfg.optim.batch_size)?;
    let d = cfg.model.feature_dim;

    let trainable: Vec<String> = model
        .named_params()
        .into_iter()
        .filter(|(_, t)| t.is_tracked())
        .map(|(n, _)| n)
        .collect();
    let mut sgd = Sgd::new(cfg.optim.momentum);
    let mut rng_batches = stream_rng(cfg.optim.seed, STREAM_STAGE2_BATCHES);
    let mut rng_pairs = stream_rng(cfg.optim.seed, STREAM_PAIR_SAMPLING);

    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let log_path = out_dir.join("stage2_log.jsonl");
    let mut log = LogWriter::create(&log_path)?;

    let epochs = cfg.optim.epochs_stage2;
    let zero = || Tensor::<T>::scalar(T::from_f64(0.0));
    let mut first_epoch_loss = 0.0;
    let mut last_epoch_loss = 0.0;
    for epoch in 0..epochs {
        let lr = lr_at(&cfg.optim, epochs, epoch);
        let balanced = cfg.losses.rcd;
        let batches = epoch_batches(&dataset.labels, cfg.optim.batch_size, balanced, &mut rng_batches)?;
        let mut epoch_sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let ids = dataset.ids_for(batch);
            let labels = dataset.labels_for(batch);
            let mut feat_rows = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                feat_rows.extend_from_slice(&features_all[i * d..(i + 1) * d]);
            }
            let features = Tensor::from_vec(&[batch.len(), d], feat_rows)?;
            let head_out = model.head.forward(&features)?;

            let l_cls = if cfg.losses.cls {
                ce_loss(&head_out.logits, &labels)?
            } else {
                zero()
            };
            let l_kd = if cfg.losses.kd {
                let teacher_logits: Tensor<T> = disc_store.logits_tensor(&ids)?;
                kd_loss(&head_out.logits, &teacher_logits, cfg.kd_temperature)?
            } else {
                zero()
            };
            let (l_rcd, clamped) = if cfg.losses.rcd {
                let teacher_feats: Tensor<T> = disc_store.features_tensor(&ids)?;
                let pairs = sample_pairs(&labels, cfg.pairs_per_batch, &mut rng_pairs)?;
                let anchors = gather_rows(&teacher_feats, &pairs.teacher_indices())?;
                let teacher_partners = gather_rows(&teacher_feats, &pairs.student_indices())?;
                let student_partners = gather_rows(&head_out.embedding, &pairs.student_indices())?;
                let rel_teacher = model.relation_teacher.forward(&anchors, &teacher_partners)?;
                let rel_cross = model.relation_cross.forward(&anchors, &student_partners)?;
                let out = rcd_loss(
                    &rel_teacher,
                    &rel_cross,
                    &pairs.positives(),
                    cfg.tau,
                    RCD_PRIOR.0,
                    RCD_PRIOR.1,
                    &model.proj_teacher,
                    &model.proj_cross,
                    cfg.rcd_normalization,
                )?;
                (out.loss, out.clamped)
            } else {
                (zero(), 0)
            };

            let l_dis = dis_loss(&l_cls, &l_kd, &l_rcd, cfg.weight_kd, cfg.weight_rcd)?;
            let value = l_dis.item()?.as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage: STAGE_HEAD,
                    epoch,
                    step,
                });
            }
            let record = LogRecord {
                stage: STAGE_HEAD,
                epoch,
                step,
                lr,
                l_gen: 0.0,
                l_cls: l_cls.item()?.as_f64(),
                l_kd: l_kd.item()?.as_f64(),
                l_rcd: l_rcd.item()?.as_f64(),
                l_dis: value,
                rcd_clamped: clamped as u64,
            };
            l_dis.backward()?;
            sgd.step(&mut model, &trainable, lr)?;
            epoch_sum += value;
            log.write(&record)?;
        }
        let mean = epoch_sum / batches.len() as f64;
        if epoch == 0 {
            first_epoch_loss = mean;
        }
        last_epoch_loss = mean;
    }
    log.finish()?;

    // Freeze audit: the backbone must be bit-identical to its state at the
    // start of the stage.
    for ((name, before), (_, after)) in backbone_bits.iter().zip(backbone_snapshot(&model)) {
        if *before != after {
            return Err(TrainError::FrozenBackboneChanged { param: name.clone() });
        }
    }

    let checkpoint = Checkpoint::from_model(
        &model,
        CheckpointMeta {
            stage: STAGE_HEAD,
            epoch: epochs as u32,
            seed: cfg.optim.seed,
            model_config_hash: cfg.model_config_hash(),
            payload_hash: String::new(),
        },
    );
    let checkpoint_path = out_dir.join("stage2.gckp");
    save_checkpoint(&checkpoint, &checkpoint_path)?;

    Ok(StageResult {
        model,
        checkpoint,
        checkpoint_path,
        log_path,
        first_epoch_loss,
        last_epoch_loss,
    })
}

fn backbone_snapshot<T: Element>(model: &StudentModel<T>) -> Vec<(String, Vec<u64>)> {
    let backbone: std::collections::HashSet<String> =
        model.backbone_param_names().into_iter().collect();
    model
        .named_params()
        .into_iter()
        .filter(|(name, _)| backbone.contains(name))
        .map(|(name, t)| {
            let bits = t.data().iter().map(|v| v.as_f64().to_bits()).collect();
            (name, bits)
        })
        .collect()
}

/// Runs the frozen backbone over the whole dataset in batches and returns
/// the features as one `(n * feature_dim)` row-major block.
fn precompute_features<T: Element>(
    model: &StudentModel<T>,
    dataset: &Dataset<T>,
    batch_size: usize,
) -> Result<Vec<T>, TrainError> {
    let mut out = Vec::with_capacity(dataset.len() * model.config.feature_dim);
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = dataset.batch(chunk)?;
        let features = model.backbone.forward(&x)?;
        out.extend_from_slice(features.data());
    }
    Ok(out)
}

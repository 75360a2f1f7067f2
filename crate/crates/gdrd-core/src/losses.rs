//! Training objectives and the pair sampler feeding the contrastive loss.
//!
//! Stage 1 uses a plain feature-regression loss against the generative
//! teacher. Stage 2 combines cross-entropy, softened logit distillation and a
//! relational contrastive term into one weighted composite. The regression
//! and contrastive terms are written as sums over their batch, while the
//! cross-entropy and logit terms are batch means, matching how each loss is
//! defined; the learning rate absorbs the scale difference.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::RcdNormalization;
use crate::model::{ModelError, Projection};
use crate::tensor::element::Element;
use crate::tensor::{Tensor, TensorError, LOG_EPS};

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("pair counts must satisfy 1 <= n <= m, got n={n}, m={m}")]
    BadPairCounts { n: usize, m: usize },
    #[error("scores ({scores}) and labels ({labels}) disagree in length")]
    ScoreLabelMismatch { scores: usize, labels: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("labels ({labels}) and logit rows ({rows}) disagree in length")]
    LabelCountMismatch { labels: usize, rows: usize },
    #[error("no positive pair in batch; enable class-balanced batching so every batch repeats a class")]
    NoPositivePairs,
    #[error("no negative pair in batch; a batch must contain at least two classes")]
    NoNegativePairs,
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
}

/// One ordered sample pair for the contrastive loss: the teacher side indexes
/// a high-resolution sample, the student side a low-resolution one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub teacher_index: usize,
    pub student_index: usize,
    /// True when both samples share an identity.
    pub positive: bool,
}

/// A balanced set of positive and negative pairs drawn from one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    /// Positives first, then negatives, each in sampling order.
    pub pairs: Vec<Pair>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl PairBatch {
    /// Total pair count, the `m` of the contrastive ratio.
    pub fn m(&self) -> usize {
        self.n_pos + self.n_neg
    }

    /// Negative pair count, the `n` of the contrastive ratio.
    pub fn n(&self) -> usize {
        self.n_neg
    }

    pub fn positives(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.positive).collect()
    }

    pub fn teacher_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.teacher_index).collect()
    }

    pub fn student_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.student_index).collect()
    }
}

/// Scalar values of every component of one training step, for logging.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub l_gen: f64,
    pub l_cls: f64,
    pub l_kd: f64,
    pub l_rcd: f64,
    pub l_dis: f64,
    pub weight_kd: f64,
    pub weight_rcd: f64,
    /// How many saturated log terms the contrastive loss clamped.
    pub rcd_clamped: u64,
}

/// Feature-regression loss: the summed squared Euclidean distance between
/// student and teacher feature rows. The teacher side must be constant.
pub fn gen_loss<T: Element>(student: &Tensor<T>, teacher: &Tensor<T>) -> Result<Tensor<T>, LossError> {
    Ok(student.sub(teacher)?.squared_l2_norm()?)
}

/// Result of the contrastive loss: the loss tensor plus how many log terms
/// were clamped away from their singularity.
pub struct RcdOutput<T: Element> {
    pub loss: Tensor<T>,
    pub clamped: usize,
}

/// Row-wise dot products of two equal-shape (rows, dim) tensors -> (rows,).
pub fn critic_scores<T: Element>(p1: &Tensor<T>, p2: &Tensor<T>) -> Result<Tensor<T>, LossError> {
    Ok(p1.mul(p2)?.sum(Some(1))?)
}

/// Relational contrastive loss over precomputed critic scores.
///
/// Each score feeds q = exp(s/τ) / (exp(s/τ) + n/m); positives contribute
/// −log q, negatives −log(1−q). The two log terms are exactly the columns of
/// a log-softmax over [s/τ, ln(n/m)], which is how they are computed here —
/// stable at any score magnitude. Log values are floored at ln(1e-12)
/// (clamping q away from 1 in negative terms), and every floored selected
/// term increments the clamp counter.
///
/// `n` and `m` enter only through the ratio n/m; callers normally pass the
/// batch's negative and total pair counts, but the formula stays valid for
/// any 1 ≤ n ≤ m.
pub fn rcd_from_scores<T: Element>(
    scores: &Tensor<T>,
    positive: &[bool],
    tau: f64,
    n: usize,
    m: usize,
    normalization: RcdNormalization,
) -> Result<RcdOutput<T>, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::BadTemperature(tau));
    }
    if n == 0 || m < n {
        return Err(LossError::BadPairCounts { n, m });
    }
    let rows = scores.len();
    if rows != positive.len() {
        return Err(LossError::ScoreLabelMismatch {
            scores: rows,
            labels: positive.len(),
        });
    }
    if rows == 0 {
        return Err(LossError::BadPairCounts { n, m: 0 });
    }

    let scaled = scores.reshape(&[rows, 1])?.scale(T::from_f64(1.0 / tau))?;
    let ratio_log = T::from_f64((n as f64 / m as f64).ln());
    let ratio_col = Tensor::from_vec(&[rows, 1], vec![ratio_log; rows])?;
    // Column 0 holds log q, column 1 holds log(1-q).
    let log_q = Tensor::concat(&[scaled, ratio_col], 1)?.log_softmax(1)?;

    let floor = T::from_f64(LOG_EPS);
    let floor_tensor = Tensor::from_vec(&[rows, 2], vec![floor; 2 * rows])?;
    let clamped_log_q = log_q.sub(&floor_tensor)?.relu()?.add(&floor_tensor)?;

    let mut mask = vec![T::zero(); 2 * rows];
    let mut clamped = 0usize;
    for (r, pos) in positive.iter().enumerate() {
        let col = if *pos { 0 } else { 1 };
        mask[r * 2 + col] = T::one();
        if log_q.data()[r * 2 + col] < floor {
            clamped += 1;
        }
    }
    let mask = Tensor::from_vec(&[rows, 2], mask)?;

    let summed = clamped_log_q.mul(&mask)?.sum(None)?;
    let scale = match normalization {
        RcdNormalization::Sum => -1.0,
        RcdNormalization::Mean => -1.0 / rows as f64,
    };
    let loss = summed.scale(T::from_f64(scale))?;
    Ok(RcdOutput { loss, clamped })
}

/// Relational contrastive loss from relation vectors: projects the teacher
/// and cross relation vectors through their heads, takes the critic dot
/// products, and applies [`rcd_from_scores`]. Gradients flow through both
/// projections and both relation-vector arguments.
#[allow(clippy::too_many_arguments)]
pub fn rcd_loss<T: Element>(
    v_teacher: &Tensor<T>,
    v_cross: &Tensor<T>,
    positive: &[bool],
    tau: f64,
    n: usize,
    m: usize,
    proj_teacher: &Projection<T>,
    proj_cross: &Projection<T>,
    normalization: RcdNormalization,
) -> Result<RcdOutput<T>, LossError> {
    let p1 = proj_teacher.forward(v_teacher)?;
    let p2 = proj_cross.forward(v_cross)?;
    let scores = critic_scores(&p1, &p2)?;
    rcd_from_scores(&scores, positive, tau, n, m, normalization)
}

/// Softened logit distillation: mean over the batch of
/// T² · KL(softmax(teacher/T) ‖ softmax(student/T)).
pub fn kd_loss<T: Element>(
    student_logits: &Tensor<T>,
    teacher_logits: &Tensor<T>,
    temperature: f64,
) -> Result<Tensor<T>, LossError> {
    if !(temperature > 0.0) {
        return Err(LossError::BadTemperature(temperature));
    }
    if student_logits.shape() != teacher_logits.shape() || student_logits.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "kd_loss",
            lhs: student_logits.shape().to_vec(),
            rhs: teacher_logits.shape().to_vec(),
        }
        .into());
    }
    let batch = student_logits.shape()[0];
    let inv_t = T::from_f64(1.0 / temperature);
    // The teacher is a constant target regardless of how it was produced.
    let teacher_soft = teacher_logits.detach().scale(inv_t)?.softmax(1)?;
    let student_log = student_logits.scale(inv_t)?.log_softmax(1)?;

    // KL(p ‖ q) = Σ p log p − Σ p log q; the first term is constant.
    let mut p_log_p = 0.0f64;
    for p in teacher_soft.data() {
        let p = p.as_f64();
        if p > 0.0 {
            p_log_p += p * p.ln();
        }
    }
    let cross = teacher_soft.mul(&student_log)?.sum(None)?;
    let const_term = Tensor::from_vec(&[], vec![T::from_f64(p_log_p)])?;
    let kl_sum = const_term.sub(&cross)?;
    Ok(kl_sum.scale(T::from_f64(temperature * temperature / batch as f64))?)
}

/// Cross-entropy: mean over the batch of −log softmax(logits)[label].
pub fn ce_loss<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>, LossError> {
    if logits.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "ce_loss",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        }
        .into());
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(LossError::LabelCountMismatch {
            labels: labels.len(),
            rows: batch,
        });
    }
    let mut mask = vec![T::zero(); batch * classes];
    for (row, label) in labels.iter().enumerate() {
        if *label >= classes {
            return Err(LossError::LabelOutOfRange {
                label: *label,
                classes,
            });
        }
        mask[row * classes + label] = T::one();
    }
    let mask = Tensor::from_vec(&[batch, classes], mask)?;
    let picked = logits.log_softmax(1)?.mul(&mask)?.sum(None)?;
    Ok(picked.scale(T::from_f64(-1.0 / batch as f64))?)
}

/// The composite head loss: cls + weight_kd·kd + weight_rcd·rcd, kept as a
/// graph node so one backward pass covers all components.
pub fn dis_loss<T: Element>(
    l_cls: &Tensor<T>,
    l_kd: &Tensor<T>,
    l_rcd: &Tensor<T>,
    weight_kd: f64,
    weight_rcd: f64,
) -> Result<Tensor<T>, LossError> {
    let weighted_kd = l_kd.scale(T::from_f64(weight_kd))?;
    let weighted_rcd = l_rcd.scale(T::from_f64(weight_rcd))?;
    Ok(l_cls.add(&weighted_kd)?.add(&weighted_rcd)?)
}

/// Draws a balanced pair batch from the labels of one training batch.
///
/// Candidates are ordered index pairs (i, j), i ≠ j: positives share a label,
/// negatives differ. k = min(#positives, #negatives, `pairs_per_batch`) pairs
/// are drawn from each side without replacement, so the result always has
/// n_pos = n_neg and the contrastive ratio n/m is exactly 1/2.
pub fn sample_pairs(labels: &[usize], pairs_per_batch: usize, rng: &mut ChaCha8Rng) -> Result<PairBatch, LossError> {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    if positives.is_empty() {
        return Err(LossError::NoPositivePairs);
    }
    if negatives.is_empty() {
        return Err(LossError::NoNegativePairs);
    }
    let k = pairs_per_batch.min(positives.len()).min(negatives.len());
    let mut pairs = Vec::with_capacity(2 * k);
    for (candidates, positive) in [(positives, true), (negatives, false)] {
        for idx in rand::seq::index::sample(rng, candidates.len(), k) {
            let (i, j) = candidates[idx];
            pairs.push(Pair {
                teacher_index: i,
                student_index: j,
                positive,
            });
        }
    }
    Ok(PairBatch {
        pairs,
        n_pos: k,
        n_neg: k,
    })
}

/// Selects rows of a (rows, dim) tensor by index, keeping the result inside
/// the autodiff graph: the selection is a constant 0/1 matrix multiplied onto
/// the source, so cotangents route back to the picked rows.
pub fn gather_rows<T: Element>(src: &Tensor<T>, indices: &[usize]) -> Result<Tensor<T>, LossError> {
    if src.shape().len() != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "gather_rows",
            lhs: src.shape().to_vec(),
            rhs: vec![indices.len()],
        }
        .into());
    }
    let rows = src.shape()[0];
    let mut select = vec![T::zero(); indices.len() * rows];
    for (out_row, index) in indices.iter().enumerate() {
        if *index >= rows {
            return Err(LossError::RowOutOfRange { index: *index, rows });
        }
        select[out_row * rows + index] = T::one();
    }
    let select = Tensor::from_vec(&[indices.len(), rows], select)?;
    Ok(select.matmul(src)?)
}

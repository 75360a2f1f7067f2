//! The student network and its auxiliary distillation modules.
//!
//! The student splits into a convolutional backbone producing an intermediate
//! feature, and a head producing the evaluation embedding plus class logits.
//! Two relation modules map ordered pairs of feature vectors to unit relation
//! vectors — one over teacher/teacher pairs, one over teacher/student pairs —
//! and two projection heads map relation vectors into the space where the
//! contrastive critic score is a dot product.
//!
//! Parameter initialisation draws every weight from one seeded stream in a
//! fixed module order, so a model is a pure function of (config, class count,
//! seed).

use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::ModelConfig;
use crate::rng::{stream_rng, STREAM_MODEL_INIT};
use crate::tensor::element::Element;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expected input shape (batch, {channels}, {side}, {side}), got {got:?}")]
    InputShape {
        channels: usize,
        side: usize,
        got: Vec<usize>,
    },
    #[error("expected features of width {expected}, got shape {got:?}")]
    FeatureDim { expected: usize, got: Vec<usize> },
    #[error("unknown parameter name {name:?}")]
    UnknownParam { name: String },
    #[error("parameter {name:?} expects shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("model needs at least one class, got {got}")]
    ClassCount { got: usize },
}

/// Draws a weight tensor from the shared init stream: uniform in
/// ±sqrt(6 / (fan_in + fan_out)), in row-major element order.
fn glorot_uniform<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let n: usize = shape.iter().product();
    let data: Vec<T> = (0..n).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::param(shape, data).expect("shape/data lengths agree by construction")
}

fn zero_param<T: Element>(shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![T::zero(); n]).expect("shape/data lengths agree by construction")
}

/// A fully connected layer computing y = x W^T + b.
pub struct LinearLayer<T: Element> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Element> LinearLayer<T> {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            w: glorot_uniform(rng, &[out_dim, in_dim], in_dim, out_dim),
            b: zero_param(&[out_dim]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.linear(&self.w, &self.b)
    }
}

/// A 3x3, stride-2, pad-1 convolution block (the only kind the backbone uses).
pub struct ConvLayer<T: Element> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Element> ConvLayer<T> {
    pub fn init(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> Self {
        ConvLayer {
            w: glorot_uniform(rng, &[out_ch, in_ch, 3, 3], in_ch * 9, out_ch * 9),
            b: zero_param(&[out_ch]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        x.conv2d(&self.w, &self.b, 2, 1)
    }
}

/// The student backbone: strided conv+relu blocks, global average pooling,
/// and a linear map to the feature width the generative teacher uses.
pub struct Backbone<T: Element> {
    pub convs: Vec<ConvLayer<T>>,
    pub fc: LinearLayer<T>,
    input_channels: usize,
    input_side: usize,
}

impl<T: Element> Backbone<T> {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let mut convs = Vec::with_capacity(cfg.conv_channels.len());
        let mut in_ch = cfg.input_channels;
        for &out_ch in &cfg.conv_channels {
            convs.push(ConvLayer::init(rng, in_ch, out_ch));
            in_ch = out_ch;
        }
        let fc = LinearLayer::init(rng, in_ch, cfg.feature_dim);
        Backbone {
            convs,
            fc,
            input_channels: cfg.input_channels,
            input_side: cfg.input_side,
        }
    }

    /// (batch, channels, side, side) -> (batch, feature_dim).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let want = [self.input_channels, self.input_side, self.input_side];
        if x.shape().len() != 4 || x.shape()[1..] != want {
            return Err(ModelError::InputShape {
                channels: self.input_channels,
                side: self.input_side,
                got: x.shape().to_vec(),
            });
        }
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        // Global average pool: mean over width, then height.
        let pooled = h.mean(Some(3))?.mean(Some(2))?;
        Ok(self.fc.forward(&pooled)?)
    }
}

/// The student head: embedding MLP plus a classification layer.
pub struct Head<T: Element> {
    pub fc1: LinearLayer<T>,
    pub fc2: LinearLayer<T>,
    pub logits: LinearLayer<T>,
    feature_dim: usize,
}

/// Output of [`Head::forward`]: the evaluation embedding and class logits.
pub struct HeadOutput<T: Element> {
    pub embedding: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<T: Element> Head<T> {
    fn init(rng: &mut ChaCha8Rng, cfg: &ModelConfig, num_classes: usize) -> Self {
        Head {
            fc1: LinearLayer::init(rng, cfg.feature_dim, cfg.embed_dim),
            fc2: LinearLayer::init(rng, cfg.embed_dim, cfg.embed_dim),
            logits: LinearLayer::init(rng, cfg.embed_dim, num_classes),
            feature_dim: cfg.feature_dim,
        }
    }

    /// (batch, feature_dim) -> embedding (batch, embed_dim) and logits
    /// (batch, classes).
    pub fn forward(&self, features: &Tensor<T>) -> Result<HeadOutput<T>, ModelError> {
        if features.shape().len() != 2 || features.shape()[1] != self.feature_dim {
            return Err(ModelError::FeatureDim {
                expected: self.feature_dim,
                got: features.shape().to_vec(),
            });
        }
        let hidden = self.fc1.forward(features)?.relu()?;
        let embedding = self.fc2.forward(&hidden)?;
        let logits = self.logits.forward(&embedding)?;
        Ok(HeadOutput { embedding, logits })
    }
}

/// Maps an ordered pair of equal-width vectors to a unit relation vector.
pub struct RelationModule<T: Element> {
    pub fc1: LinearLayer<T>,
    pub fc2: LinearLayer<T>,
    in_dim: usize,
}

impl<T: Element> RelationModule<T> {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        RelationModule {
            fc1: LinearLayer::init(rng, 2 * in_dim, hidden),
            fc2: LinearLayer::init(rng, hidden, out_dim),
            in_dim,
        }
    }

    /// Builds a relation module from explicit layers (used by fixtures).
    pub fn from_layers(fc1: LinearLayer<T>, fc2: LinearLayer<T>, in_dim: usize) -> Self {
        RelationModule { fc1, fc2, in_dim }
    }

    /// (pairs, in_dim) x (pairs, in_dim) -> (pairs, out_dim), unit rows.
    /// The pair is ordered: swapping the arguments changes the output.
    pub fn forward(&self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        for side in [a, b] {
            if side.shape().len() != 2 || side.shape()[1] != self.in_dim {
                return Err(ModelError::FeatureDim {
                    expected: self.in_dim,
                    got: side.shape().to_vec(),
                });
            }
        }
        if a.shape()[0] != b.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "relation_forward",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            }
            .into());
        }
        let joint = Tensor::concat(&[a.clone(), b.clone()], 1)?;
        let hidden = self.fc1.forward(&joint)?.relu()?;
        Ok(self.fc2.forward(&hidden)?.l2_normalize()?)
    }
}

/// A linear map followed by normalization; two of these put the teacher and
/// cross relation vectors into a common space where their dot product is the
/// contrastive critic score.
pub struct Projection<T: Element> {
    pub fc: LinearLayer<T>,
    in_dim: usize,
}

impl<T: Element> Projection<T> {
    pub fn init(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> Self {
        Projection {
            fc: LinearLayer::init(rng, in_dim, out_dim),
            in_dim,
        }
    }

    pub fn from_layer(fc: LinearLayer<T>, in_dim: usize) -> Self {
        Projection { fc, in_dim }
    }

    /// (pairs, in_dim) -> (pairs, out_dim), unit rows.
    pub fn forward(&self, v: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        if v.shape().len() != 2 || v.shape()[1] != self.in_dim {
            return Err(ModelError::FeatureDim {
                expected: self.in_dim,
                got: v.shape().to_vec(),
            });
        }
        Ok(self.fc.forward(v)?.l2_normalize()?)
    }
}

/// The full trainable bundle: student plus the relation and projection
/// modules that exist only for the contrastive distillation loss.
pub struct StudentModel<T: Element> {
    pub config: ModelConfig,
    pub num_classes: usize,
    pub backbone: Backbone<T>,
    pub head: Head<T>,
    /// Relation module over (teacher_i, teacher_j) pairs.
    pub relation_teacher: RelationModule<T>,
    /// Relation module over (teacher_i, student_j) pairs.
    pub relation_cross: RelationModule<T>,
    /// Projection applied to teacher relation vectors.
    pub proj_teacher: Projection<T>,
    /// Projection applied to cross relation vectors.
    pub proj_cross: Projection<T>,
}

impl<T: Element> StudentModel<T> {
    /// Initialises every module from (config, class count, seed). The init
    /// stream is consumed in declaration order — backbone, head, relation
    /// modules, projections — so adding parameters at the end never shifts
    /// earlier draws.
    pub fn new(cfg: &ModelConfig, num_classes: usize, seed: u64) -> Result<Self, ModelError> {
        if num_classes == 0 {
            return Err(ModelError::ClassCount { got: 0 });
        }
        let mut rng = stream_rng(seed, STREAM_MODEL_INIT);
        let backbone = Backbone::init(&mut rng, cfg);
        let head = Head::init(&mut rng, cfg, num_classes);
        let relation_teacher = RelationModule::init(&mut rng, cfg.embed_dim, cfg.relation_hidden, cfg.relation_dim);
        let relation_cross = RelationModule::init(&mut rng, cfg.embed_dim, cfg.relation_hidden, cfg.relation_dim);
        let proj_teacher = Projection::init(&mut rng, cfg.relation_dim, cfg.proj_dim);
        let proj_cross = Projection::init(&mut rng, cfg.relation_dim, cfg.proj_dim);
        Ok(StudentModel {
            config: cfg.clone(),
            num_classes,
            backbone,
            head,
            relation_teacher,
            relation_cross,
            proj_teacher,
            proj_cross,
        })
    }

    /// Backbone followed by head; the embedding every protocol evaluates.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        let features = self.backbone.forward(x)?;
        Ok(self.head.forward(&features)?.embedding)
    }

    /// Every parameter with its stable name, in initialisation order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name, t.clone())));
        out
    }

    fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor<T>)) {
        for (i, conv) in self.backbone.convs.iter().enumerate() {
            f(format!("backbone.conv{i}.weight"), &conv.w);
            f(format!("backbone.conv{i}.bias"), &conv.b);
        }
        f("backbone.fc.weight".into(), &self.backbone.fc.w);
        f("backbone.fc.bias".into(), &self.backbone.fc.b);
        for (prefix, layer) in [
            ("head.fc1", &self.head.fc1),
            ("head.fc2", &self.head.fc2),
            ("head.logits", &self.head.logits),
            ("relation_teacher.fc1", &self.relation_teacher.fc1),
            ("relation_teacher.fc2", &self.relation_teacher.fc2),
            ("relation_cross.fc1", &self.relation_cross.fc1),
            ("relation_cross.fc2", &self.relation_cross.fc2),
            ("proj_teacher.fc", &self.proj_teacher.fc),
            ("proj_cross.fc", &self.proj_cross.fc),
        ] {
            f(format!("{prefix}.weight"), &layer.w);
            f(format!("{prefix}.bias"), &layer.b);
        }
    }

    fn visit_mut<'a>(&'a mut self, mut f: impl FnMut(String, &'a mut Tensor<T>)) {
        for (i, conv) in self.backbone.convs.iter_mut().enumerate() {
            f(format!("backbone.conv{i}.weight"), &mut conv.w);
            f(format!("backbone.conv{i}.bias"), &mut conv.b);
        }
        f("backbone.fc.weight".into(), &mut self.backbone.fc.w);
        f("backbone.fc.bias".into(), &mut self.backbone.fc.b);
        for (prefix, layer) in [
            ("head.fc1", &mut self.head.fc1),
            ("head.fc2", &mut self.head.fc2),
            ("head.logits", &mut self.head.logits),
            ("relation_teacher.fc1", &mut self.relation_teacher.fc1),
            ("relation_teacher.fc2", &mut self.relation_teacher.fc2),
            ("relation_cross.fc1", &mut self.relation_cross.fc1),
            ("relation_cross.fc2", &mut self.relation_cross.fc2),
            ("proj_teacher.fc", &mut self.proj_teacher.fc),
            ("proj_cross.fc", &mut self.proj_cross.fc),
        ] {
            f(format!("{prefix}.weight"), &mut layer.w);
            f(format!("{prefix}.bias"), &mut layer.b);
        }
    }

    /// Mutable access to every parameter slot, in the same order as
    /// [`StudentModel::named_params`]. The optimizer replaces slots with
    /// fresh leaves rather than mutating tensors in place.
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_mut(|name, t| out.push((name, t)));
        out
    }

    /// Replaces one parameter by name, checking the shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<(), ModelError> {
        for (n, slot) in self.named_params_mut() {
            if n == name {
                if slot.shape() != value.shape() {
                    return Err(ModelError::ParamShape {
                        name: name.to_string(),
                        expected: slot.shape().to_vec(),
                        got: value.shape().to_vec(),
                    });
                }
                *slot = value;
                return Ok(());
            }
        }
        Err(ModelError::UnknownParam {
            name: name.to_string(),
        })
    }

    /// The names the stage-2 freeze applies to.
    pub fn backbone_param_names(&self) -> Vec<String> {
        self.named_params()
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| n.starts_with("backbone."))
            .collect()
    }

    /// Marks the named parameters as non-learnable: values are kept but the
    /// tensors become untracked constants, so they receive no gradients and
    /// the optimizer skips them.
    pub fn freeze(&mut self, names: &[String]) -> Result<(), ModelError> {
        self.refit(names, |t| t.detach())
    }

    /// Re-registers the named parameters as learnable leaves, keeping values.
    pub fn unfreeze(&mut self, names: &[String]) -> Result<(), ModelError> {
        self.refit(names, |t| {
            Tensor::param(t.shape(), t.data().to_vec()).expect("existing tensors are self-consistent")
        })
    }

    fn refit(&mut self, names: &[String], rebuild: impl Fn(&Tensor<T>) -> Tensor<T>) -> Result<(), ModelError> {
        let known: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for name in names {
            if !known.contains(name) {
                return Err(ModelError::UnknownParam { name: name.clone() });
            }
        }
        self.visit_mut(|name, slot| {
            if names.contains(&name) {
                *slot = rebuild(slot);
            }
        });
        Ok(())
    }

    pub fn freeze_backbone(&mut self) -> Result<(), ModelError> {
        let names = self.backbone_param_names();
        self.freeze(&names)
    }

    pub fn backbone_frozen(&self) -> bool {
        self.named_params()
            .iter()
            .filter(|(n, _)| n.starts_with("backbone."))
            .all(|(_, t)| !t.is_tracked())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn init_is_a_pure_function_of_config_and_seed() {
        let a = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let b = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let c = StudentModel::<f32>::new(&tiny_config(), 4, 8).unwrap();
        for ((na, ta), (nb, tb)) in a.named_params().iter().zip(b.named_params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data(), "{na} differs between equal seeds");
        }
        let differs = a
            .named_params()
            .iter()
            .zip(c.named_params().iter())
            .any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(differs, "different seeds should give different weights");
    }

    #[test]
    fn zero_input_with_zero_biases_gives_zero_features() {
        let model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let x = Tensor::zeros(&[2, 1, 8, 8]);
        let f = model.backbone.forward(&x).unwrap();
        assert_eq!(f.shape(), &[2, 4]);
        assert!(f.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_inputs_give_identical_rows() {
        let model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let one: Vec<f32> = (0..64).map(|i| (i as f32) / 64.0).collect();
        let mut two = one.clone();
        two.extend_from_slice(&one);
        let x = Tensor::from_vec(&[2, 1, 8, 8], two).unwrap();
        let out = model.head.forward(&model.backbone.forward(&x).unwrap()).unwrap();
        let e = out.embedding;
        assert_eq!(e.data()[..5], e.data()[5..10]);
        let z = out.logits;
        assert_eq!(z.data()[..4], z.data()[4..8]);
    }

    #[test]
    fn backbone_rejects_wrong_input_shape() {
        let model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let x = Tensor::zeros(&[2, 1, 16, 16]);
        assert!(matches!(
            model.backbone.forward(&x),
            Err(ModelError::InputShape { side: 8, .. })
        ));
    }

    #[test]
    fn embedding_width_is_independent_of_class_count() {
        for classes in [2, 4, 9] {
            let model = StudentModel::<f32>::new(&tiny_config(), classes, 7).unwrap();
            let x = Tensor::zeros(&[1, 1, 8, 8]);
            let out = model.head.forward(&model.backbone.forward(&x).unwrap()).unwrap();
            assert_eq!(out.embedding.shape(), &[1, 5]);
            assert_eq!(out.logits.shape(), &[1, classes]);
        }
    }

    #[test]
    fn relation_output_is_unit_norm_and_order_sensitive() {
        let model = StudentModel::<f64>::new(&tiny_config(), 4, 7).unwrap();
        let a = Tensor::from_vec(&[1, 5], vec![0.1, -0.4, 0.7, 0.2, -0.9]).unwrap();
        let b = Tensor::from_vec(&[1, 5], vec![0.6, 0.3, -0.2, 0.8, 0.1]).unwrap();
        let ab = model.relation_teacher.forward(&a, &b).unwrap();
        let ba = model.relation_teacher.forward(&b, &a).unwrap();
        let norm: f64 = ab.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_ne!(ab.data(), ba.data(), "relation pairs are ordered");
    }

    #[test]
    fn relation_normalizes_a_three_four_output_to_unit() {
        // Layers rigged so the pre-normalization output is exactly (3, 4).
        let fc1 = LinearLayer {
            w: Tensor::<f64>::param(&[1, 2], vec![0.0, 0.0]).unwrap(),
            b: Tensor::param(&[1], vec![1.0]).unwrap(),
        };
        let fc2 = LinearLayer {
            w: Tensor::param(&[2, 1], vec![3.0, 4.0]).unwrap(),
            b: Tensor::param(&[2], vec![0.0, 0.0]).unwrap(),
        };
        let module = RelationModule::from_layers(fc1, fc2, 1);
        let a = Tensor::from_vec(&[1, 1], vec![0.3]).unwrap();
        let b = Tensor::from_vec(&[1, 1], vec![-0.8]).unwrap();
        let v = module.forward(&a, &b).unwrap();
        assert!((v.data()[0] - 0.6).abs() < 1e-12);
        assert!((v.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn projected_vectors_are_unit_and_dots_are_bounded() {
        let model = StudentModel::<f64>::new(&tiny_config(), 4, 7).unwrap();
        let v = Tensor::from_vec(&[2, 3], vec![0.5, -0.1, 0.86, -0.3, 0.9, 0.3]).unwrap();
        let p1 = model.proj_teacher.forward(&v).unwrap();
        let p2 = model.proj_cross.forward(&v).unwrap();
        for row in 0..2 {
            let n: f64 = p1.data()[row * 2..(row + 1) * 2].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            let dot: f64 = p1.data()[row * 2..(row + 1) * 2]
                .iter()
                .zip(&p2.data()[row * 2..(row + 1) * 2])
                .map(|(a, b)| a * b)
                .sum();
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&dot));
        }
    }

    #[test]
    fn freeze_lists_exactly_the_backbone_parameters() {
        let model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let names = model.backbone_param_names();
        assert_eq!(
            names,
            vec![
                "backbone.conv0.weight",
                "backbone.conv0.bias",
                "backbone.conv1.weight",
                "backbone.conv1.bias",
                "backbone.fc.weight",
                "backbone.fc.bias",
            ]
        );
    }

    #[test]
    fn freeze_unfreeze_roundtrip_keeps_values() {
        let mut model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let before: Vec<Vec<f32>> = model.named_params().iter().map(|(_, t)| t.data().to_vec()).collect();
        model.freeze_backbone().unwrap();
        assert!(model.backbone_frozen());
        let names = model.backbone_param_names();
        model.unfreeze(&names).unwrap();
        assert!(!model.backbone_frozen());
        let after: Vec<Vec<f32>> = model.named_params().iter().map(|(_, t)| t.data().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn freeze_rejects_unknown_parameter_names() {
        let mut model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let err = model.freeze(&["backbone.conv9.weight".to_string()]).unwrap_err();
        assert!(matches!(err, ModelError::UnknownParam { .. }));
    }

    #[test]
    fn frozen_backbone_receives_no_gradients() {
        let mut model = StudentModel::<f64>::new(&tiny_config(), 4, 7).unwrap();
        model.freeze_backbone().unwrap();
        let x = Tensor::from_vec(&[1, 1, 8, 8], (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let out = model.head.forward(&model.backbone.forward(&x).unwrap()).unwrap();
        let loss = out.logits.squared_l2_norm().unwrap();
        loss.backward().unwrap();
        // Head got gradients, backbone tensors are untracked constants.
        let grads = model.head.fc1.w.grad().unwrap();
        assert!(grads.iter().any(|g| *g != 0.0));
        for name in model.backbone_param_names() {
            let (_, t) = model
                .named_params()
                .into_iter()
                .find(|(n, _)| *n == name)
                .unwrap();
            assert!(!t.is_tracked());
        }
    }

    #[test]
    fn set_param_checks_shape_and_name() {
        let mut model = StudentModel::<f32>::new(&tiny_config(), 4, 7).unwrap();
        let bad = Tensor::param(&[1, 1], vec![0.0]).unwrap();
        assert!(matches!(
            model.set_param("backbone.fc.bias", bad),
            Err(ModelError::ParamShape { .. })
        ));
        let good = Tensor::param(&[4], vec![1.0; 4]).unwrap();
        model.set_param("backbone.fc.bias", good).unwrap();
        assert_eq!(model.backbone.fc.b.data(), &[1.0; 4]);
        let stray = Tensor::param(&[1], vec![0.0]).unwrap();
        assert!(matches!(
            model.set_param("no.such.param", stray),
            Err(ModelError::UnknownParam { .. })
        ));
    }
}

//! Training and evaluation framework for distilling high-resolution face
//! recognition knowledge into a small student network that operates on very
//! low-resolution images.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: a reverse-mode autodiff engine over dense row-major tensors,
//!   with deterministic parallel kernels and a finite-difference gradient
//!   checker.
//! - [`rng`]: seeded, stream-separated random number generation.
//! - [`model`]: the student backbone, classification head, relation modules
//!   and projection heads.
//! - [`losses`]: regression distillation, relation-contrastive distillation,
//!   soft-label distillation and classification losses, plus pair sampling.
//! - [`data`]: dataset manifests, grayscale image IO, the resolution
//!   degradation transform, teacher feature stores, checkpoints and the
//!   synthetic dataset generator.
//! - [`train`]: SGD with momentum, the learning-rate schedule and the
//!   two-stage module-wise training procedures.
//! - [`eval`]: verification, retrieval and identification protocols.
//! - [`gradcheck`]: a registry of gradient checks over every primitive and
//!   the composite losses.

pub mod config;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use tensor::element::Element;
pub use tensor::{Tensor, TensorError};

//! Progressive four-stage knowledge distillation for small transformer
//! encoders.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`], [`tape`] and [`gradcheck`]: an `f64` tensor engine with
//!   reverse-mode differentiation and a finite-difference oracle.
//! * [`model`]: a post-layer-norm transformer encoder that exposes its
//!   attention distributions and hidden states as a [`model::ForwardTrace`].
//! * [`distill`]: latent, soft-label and hard-label losses and the unified
//!   stage loss.
//! * [`curriculum`]: stages, schedule validation, Adam, and the training
//!   loops for teachers and students.
//! * [`data`]: vocabulary, corpora, masking, batching and the synthetic task.
//! * [`persist`] and [`metrics`]: checkpoints, run configuration, metric
//!   files and evaluation metrics.
//! * [`experiment`]: the desk-scale ablation and generalization studies.

pub mod curriculum;
pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
mod gemm;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod persist;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/transformer.md")]
    mod transformer {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/curriculum.md")]
    mod curriculum {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/persistence.md")]
    mod persistence {}
}

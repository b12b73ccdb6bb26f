//! Confidence-aware self-distillation (CASD) for multimodal classification
//! under missing modalities.
//!
//! The crate is organized around a small dense-tensor autodiff engine
//! ([`tape`]) on top of which the evidential distribution algebra
//! ([`evidist`]), the confidence-weighted Student's-t fusion ([`fusion`]),
//! the per-modality encoders ([`encoder`]), and the teacher/student
//! distillation loop ([`train`]) are built. Synthetic three-modality
//! sequence data lives in [`data`], classification metrics and
//! missing-modality evaluation in [`eval`].

pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod evidist;
pub mod fusion;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{CasdError, Result};
pub use tensor::Tensor;

//! Hierarchical multimodal fusion for utterance-level sentiment and emotion
//! classification.
//!
//! Text, audio and video feature sequences of a video are each passed through
//! a context GRU, mapped to a shared width, fused pairwise dimension by
//! dimension, fused again into one trimodal feature, contextualized once more
//! and classified per utterance. The crate carries its own dense matrix type,
//! tape-based reverse-mode differentiation, a finite-difference oracle, Adam,
//! early stopping, metrics and a synthetic data generator.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and thread
//! pools live in the companion `hierfuse` crate.

#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use model::{ModelConfig, ModelParams, Modality, ModalitySet, Variant};
pub use tape::{Tape, Var};

//! Disentangled graph contrastive rating prediction from review vectors.
//!
//! The pipeline: chunked ID embeddings and projected review vectors feed
//! factorized message passing over the training rating graph ([`dgl`]); an
//! attention head votes per-factor ratings ([`interact`]); two factor-wise
//! contrastive losses regularize training ([`dcl`]). Everything is built on a
//! small reverse-mode tape ([`tape`]) over dense `f64` matrices.

// index loops mirror the math in the kernels and their tests
#![allow(clippy::needless_range_loop)]

pub mod atomic;
pub mod data;
pub mod dcl;
pub mod dgl;
pub mod error;
pub mod evalx;
pub mod interact;
pub mod model;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use data::{InteractionDataset, RatingGraph, RatingScale, Split};
pub use error::{Error, Result};
pub use model::{DgclrModel, ModelConfig, Prediction, Variant};
pub use optim::Adam;
pub use params::{Parameter, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use trainer::{fit, Checkpoint, FitResult, History, TrainConfig};

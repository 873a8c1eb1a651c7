//! Hierarchical multi-behavior graph attention recommendation.
//!
//! The crate covers the whole pipeline: a multi-behavior user-item graph
//! store, a small reverse-mode tensor engine, the intra- and inter-behavior
//! attention layers, hierarchy-aware pairwise ranking with multi-behavior
//! sub-graph sampling, optional translation-based knowledge-graph training,
//! and full-ranking evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`, which is what the training loop and the
//! gradient checks use by default.

pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{BehaviorId, Interaction, MultiBehaviorGraph, Side};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type KgParams = model::KgParams<f64>;
pub type LayerOutput = model::LayerOutput<f64>;

pub type Tensor32 = tensor::Tensor<f32>;
pub type ModelParams32 = model::ModelParams<f32>;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

//! Attention propagation over the multi-behavior graph and preference scoring.

mod checkpoint;
mod index;
mod kg;
mod layers;
mod params;
mod score;
mod temporal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use index::PropagationIndex;
pub use kg::{kg_score, kg_scores, load_kg_triples, KgData, KgParams, KgParamVars, KgTriple};
pub use layers::{
    forward, forward_values, inter_layer, intra_aggregate, intra_layer, InterOutput, IntraOutput, LayerOutput,
    LayerVars,
};
pub use params::{Attention, AttentionVars, LayerParamVars, LayerParams, ModelParams, ParamVars};
pub use score::{score, score_all_items, score_batch};
pub use temporal::{temporal_encoding, TimestampNumbering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Attend within each single-behavior graph, then average behaviors.
    Intra,
    /// Fuse behaviors per connected pair, then attend over neighbors.
    Inter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub paradigm: Paradigm,
    /// Weight of the behavior-agnostic inner product in the preference score.
    pub alpha: f64,
    pub use_temporal: bool,
    pub behaviors: Vec<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            num_layers: 2,
            paradigm: Paradigm::Intra,
            alpha: 0.5,
            use_temporal: false,
            behaviors: vec!["view".into(), "cart".into(), "buy".into()],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.use_temporal && self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "temporal encoding needs an even dim, got {}",
                self.dim
            )));
        }
        if self.behaviors.is_empty() {
            return Err(Error::Config("behavior vocabulary is empty".into()));
        }
        Ok(())
    }

    pub fn num_behaviors(&self) -> usize {
        self.behaviors.len()
    }
}

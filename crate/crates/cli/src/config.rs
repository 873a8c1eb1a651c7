use std::path::{Path, PathBuf};

use hmgn::eval::EvalSpec;
use hmgn::graph::{CsvSchema, TemporalSplit};
use hmgn::model::ModelConfig;
use hmgn::synth::SynthConfig;
use hmgn::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Sub-graph sampling settings of the `sample-subgraph` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub kernel_users: usize,
    pub hops: usize,
    pub fanouts: Vec<usize>,
    /// Negatives per positive in the triple dump.
    pub negatives: Vec<usize>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            kernel_users: 100,
            hops: 2,
            fanouts: vec![10],
            negatives: vec![1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KgPaths {
    /// `head_id,relation,tail_id` CSV.
    pub triples: PathBuf,
    /// One relation name per line.
    pub relations: PathBuf,
}

/// Everything a command can read from the config file. Every section is
/// optional; unknown keys are rejected by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: CsvSchema,
    pub split: Option<TemporalSplit>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub sample: SampleConfig,
    pub synth: SynthConfig,
    pub kg: Option<KgPaths>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }

    /// Cross-section consistency: one behavior vocabulary everywhere, and
    /// priority and target drawn from it.
    pub fn validate(&self) -> Result<(), Failure> {
        let vocab = &self.schema.behaviors;
        if &self.model.behaviors != vocab {
            return Err(Failure::Usage(format!(
                "model.behaviors {:?} differ from schema.behaviors {:?}",
                self.model.behaviors, vocab
            )));
        }
        self.model.validate()?;
        self.train.validate(vocab)?;
        self.eval.validate(vocab)?;
        if let Some(split) = &self.split {
            split.validate()?;
        }
        Ok(())
    }
}

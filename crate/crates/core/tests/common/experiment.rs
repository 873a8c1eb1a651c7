//! The desk-scale synthetic experiment shared by the pipeline tests and the
//! acceptance runner.

use hmgn::eval::EvalSpec;
use hmgn::graph::{temporal_split, Interaction, TemporalSplit};
use hmgn::model::{ModelConfig, Paradigm};
use hmgn::synth::{behaviors, generate, SynthConfig};
use hmgn::train::{SubgraphConfig, TrainConfig};
use hmgn::MultiBehaviorGraph;

pub const DATA_SEED: u64 = 1;

pub struct Experiment {
    pub train: MultiBehaviorGraph,
    pub val: MultiBehaviorGraph,
    pub test: MultiBehaviorGraph,
}

/// Default synthetic funnel (1000 users, 500 items), split at 80% / 90% of
/// the time span.
pub fn experiment() -> Experiment {
    let synth = SynthConfig {
        seed: DATA_SEED,
        ..Default::default()
    };
    let data = generate(&synth).unwrap();
    let split = TemporalSplit {
        train_end: 8000,
        val_end: 9000,
    };
    let parts = temporal_split(&data.interactions, split).unwrap();
    let build = |x: &[Interaction]| MultiBehaviorGraph::build(x, synth.num_users, synth.num_items, behaviors()).unwrap();
    Experiment {
        train: build(&parts.train),
        val: build(&parts.val),
        test: build(&parts.test),
    }
}

pub fn model_config() -> ModelConfig {
    ModelConfig {
        dim: 16,
        num_layers: 1,
        paradigm: Paradigm::Intra,
        ..Default::default()
    }
}

/// The loss is a batch mean, so the step size is large and the decay small.
pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 50.0,
        lambda_reg: 1e-6,
        epochs: 20,
        batch_size: 1024,
        seed,
        ..Default::default()
    }
}

/// Kernel users and their one-hop items: about two thirds of the nodes.
pub fn subgraph_config() -> SubgraphConfig {
    SubgraphConfig {
        kernel_users: 500,
        hops: 1,
        fanouts: vec![10],
        resample: true,
    }
}

pub fn target_spec() -> EvalSpec {
    EvalSpec {
        ks: vec![10, 100],
        behaviors: vec!["buy".into()],
        exclude_train: true,
    }
}

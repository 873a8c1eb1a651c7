//! Loss assembly and the SGD training loop.

mod loss;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSpec, MetricsTable};
use crate::graph::MultiBehaviorGraph;
use crate::model::{
    write_checkpoint, Checkpoint, KgData, KgParams, ModelConfig, ModelParams, PropagationIndex, TimestampNumbering,
};
use crate::sampler::{
    is_hierarchy_compliant, sample_hbpr_triples, sample_subgraph, subgraph_hbpr_training_set, HbprTriple, PriorityRank,
};
use crate::scalar::Scalar;
use crate::tensor::Tape;

pub use loss::{batch_objective, hbpr_loss, kg_loss, Batch, KgPair, LossVars, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgraphConfig {
    /// Number of kernel users drawn uniformly per sample.
    pub kernel_users: usize,
    pub hops: usize,
    /// One fanout for every behavior, or one per behavior.
    pub fanouts: Vec<usize>,
    /// Draw a fresh sub-graph every epoch instead of once.
    pub resample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_reg: f64,
    pub epochs: usize,
    /// Ranking triples per step.
    pub batch_size: usize,
    /// Negatives per positive, one value or one per behavior.
    pub negatives: Vec<usize>,
    /// Behaviors from highest to lowest priority.
    pub priority: Vec<String>,
    pub target_behavior: String,
    /// Keep only target-behavior triples.
    pub single_task: bool,
    pub kg_enabled: bool,
    pub kg_weight: f64,
    /// Relation space size; 0 uses the model dimension.
    pub kg_relation_dim: usize,
    pub subgraph: Option<SubgraphConfig>,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            lambda_reg: 1e-4,
            epochs: 20,
            batch_size: 1024,
            negatives: vec![1],
            priority: vec!["buy".into(), "cart".into(), "view".into()],
            target_behavior: "buy".into(),
            single_task: false,
            kg_enabled: false,
            kg_weight: 1.0,
            kg_relation_dim: 0,
            subgraph: None,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, vocabulary: &[String]) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::Config(format!("lambda_reg must be non-negative, got {}", self.lambda_reg)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.negatives.is_empty() || self.negatives.contains(&0) {
            return Err(Error::Config("negatives per positive must be at least 1".into()));
        }
        if !vocabulary.contains(&self.target_behavior) {
            return Err(Error::Unknown {
                kind: "behavior",
                name: self.target_behavior.clone(),
            });
        }
        PriorityRank::from_names(&self.priority, vocabulary)?;
        if let Some(s) = &self.subgraph {
            if s.kernel_users == 0 || s.hops == 0 {
                return Err(Error::Config("sub-graph needs kernel_users and hops of at least 1".into()));
            }
        }
        Ok(())
    }
}

/// One line of the report file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Step means of each component.
    pub hbpr: f64,
    pub reg: f64,
    pub kg: f64,
    /// `hbpr + λ·reg + kg_weight·kg`
    pub total: f64,
    pub steps: usize,
    pub triples: usize,
    /// (user, behavior) pairs without a compatible negative.
    pub skipped: usize,
    /// KG triples whose corrupted tail equalled the true tail.
    pub kg_skipped: usize,
    /// Users plus items of the sub-graph trained on, when sub-graph
    /// training is on.
    pub subgraph_nodes: Option<usize>,
    pub validation: Option<MetricsTable>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.epochs {
            writeln!(f, "{}", serde_json::to_string(r)?).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Data a training run reads.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a> {
    pub graph: &'a MultiBehaviorGraph,
    /// Validation edges and the metrics that pick the best epoch (target
    /// behavior, first cutoff, NDCG).
    pub validation: Option<(&'a MultiBehaviorGraph, &'a EvalSpec)>,
    pub kg: Option<&'a KgData>,
    /// Checkpoints and the report go here when set.
    pub out_dir: Option<&'a Path>,
}

impl<'a> TrainInputs<'a> {
    pub fn new(graph: &'a MultiBehaviorGraph) -> Self {
        Self {
            graph,
            validation: None,
            kg: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub checkpoint: Checkpoint<T>,
    pub best: Option<Checkpoint<T>>,
    pub report: TrainReport,
}

/// `p ← p − lr·∇p` for every tracked tensor.
fn sgd_step<T: Scalar>(
    tensors: Vec<&mut crate::tensor::Tensor<T>>,
    vars: &[crate::tensor::Var],
    grads: &crate::tensor::Gradients<T>,
    lr: T,
) {
    for (t, &v) in tensors.into_iter().zip(vars) {
        if let Some(g) = grads.get(v) {
            for (p, &d) in t.data_mut().iter_mut().zip(g.data()) {
                *p = *p - lr * d;
            }
        }
    }
}

fn corrupt_tails(data: &KgData, domains: &[Vec<usize>], rng: &mut ChaCha8Rng) -> (Vec<KgPair>, usize) {
    let mut pairs = Vec::with_capacity(data.triples.len());
    let mut skipped = 0;
    for &t in &data.triples {
        let domain = &domains[t.relation];
        let corrupt_tail = domain[rng.random_range(0..domain.len())];
        if corrupt_tail == t.tail {
            skipped += 1;
        } else {
            pairs.push(KgPair { triple: t, corrupt_tail });
        }
    }
    (pairs, skipped)
}

/// Up to `n` users drawn uniformly from those with at least one edge,
/// ascending.
pub fn draw_kernel_users<R: Rng>(graph: &MultiBehaviorGraph, n: usize, rng: &mut R) -> Vec<usize> {
    let active: Vec<usize> = (0..graph.num_users())
        .filter(|&u| !graph.neighbors(u, crate::graph::Side::User, None).is_empty())
        .collect();
    let mut kernel: Vec<usize> = sample_indices(rng, active.len(), n.min(active.len()))
        .into_iter()
        .map(|k| active[k])
        .collect();
    kernel.sort_unstable();
    kernel
}

struct EpochTriples {
    triples: Vec<HbprTriple>,
    skipped: usize,
}

/// Trains with plain SGD. Every epoch resamples negatives (and the
/// sub-graph when configured) and walks the shuffled triples in batches.
pub fn train<T: Scalar>(inputs: TrainInputs<'_>, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    model.validate()?;
    let graph = inputs.graph;
    if graph.behaviors() != model.behaviors.as_slice() {
        return Err(Error::Config("model behaviors differ from the graph vocabulary".into()));
    }
    cfg.validate(graph.behaviors())?;
    if graph.total_edges() == 0 {
        return Err(Error::EmptyTriples("an edgeless graph".into()));
    }
    let rank = PriorityRank::from_names(&cfg.priority, graph.behaviors())?;
    let target = graph.behavior_id(&cfg.target_behavior).expect("validated");
    let weights = LossWeights {
        lambda_reg: cfg.lambda_reg,
        kg_weight: cfg.kg_weight,
    };
    let lr = T::of(cfg.learning_rate);

    let mut params = ModelParams::<T>::init(model, graph.num_users(), graph.num_items(), cfg.seed);
    let kg_data = if cfg.kg_enabled {
        let data = inputs
            .kg
            .ok_or_else(|| Error::Config("kg_enabled is set but no knowledge graph was given".into()))?;
        if data.num_items != graph.num_items() {
            return Err(Error::Config("knowledge graph item count differs from the interaction graph".into()));
        }
        Some(data)
    } else {
        None
    };
    let relation_dim = if cfg.kg_relation_dim == 0 { model.dim } else { cfg.kg_relation_dim };
    let mut kg_params = kg_data.map(|d| KgParams::<T>::init(d, model.dim, relation_dim, cfg.seed.wrapping_add(1)));
    let domains: Vec<Vec<usize>> = kg_data
        .map(|d| (0..d.relations.len()).map(|r| d.tail_domain(r)).collect())
        .unwrap_or_default();

    let numbering = model.use_temporal.then(|| TimestampNumbering::from_graph(graph));
    let full_index = PropagationIndex::<T>::new(graph, model.dim, numbering.as_ref())?;
    let mut sub_index: Option<PropagationIndex<T>> = None;
    let mut subgraph = None;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Checkpoint<T>)> = None;
    let snapshot = |params: &ModelParams<T>, kg: &Option<KgParams<T>>| Checkpoint {
        config: model.clone(),
        seed: cfg.seed,
        params: params.clone(),
        kg: kg.clone(),
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        if let Some(sc) = &cfg.subgraph {
            if subgraph.is_none() || sc.resample {
                let kernel = draw_kernel_users(graph, sc.kernel_users, &mut rng);
                let s = sample_subgraph(graph, &kernel, sc.hops, &sc.fanouts, rng.random())?;
                sub_index = Some(PropagationIndex::new(&s.graph, model.dim, numbering.as_ref())?);
                subgraph = Some(s);
            }
        }
        let sample_seed: u64 = rng.random();
        let sampled = match &subgraph {
            Some(s) => subgraph_hbpr_training_set(s, &rank, &cfg.negatives, sample_seed)?,
            None => sample_hbpr_triples(graph, &rank, &cfg.negatives, sample_seed, None)?,
        };
        let mut epoch_triples = EpochTriples {
            skipped: sampled.skipped.len(),
            triples: sampled.triples,
        };
        if cfg.single_task {
            epoch_triples.triples.retain(|t| t.behavior == target);
        }
        if epoch_triples.triples.is_empty() {
            return Err(Error::EmptyTriples(format!("behavior {:?}", cfg.target_behavior)));
        }
        debug_assert!(epoch_triples
            .triples
            .iter()
            .all(|t| is_hierarchy_compliant(graph, &rank, t)));
        epoch_triples.triples.shuffle(&mut rng);

        let (mut kg_pairs, kg_skipped) = match kg_data {
            Some(d) => corrupt_tails(d, &domains, &mut rng),
            None => (Vec::new(), 0),
        };
        kg_pairs.shuffle(&mut rng);

        let index = sub_index.as_ref().unwrap_or(&full_index);
        let steps = epoch_triples.triples.len().div_ceil(cfg.batch_size);
        let kg_chunk = kg_pairs.len().div_ceil(steps).max(1);
        let (mut sum_hbpr, mut sum_reg, mut sum_kg) = (0.0, 0.0, 0.0);
        for (step, triples) in epoch_triples.triples.chunks(cfg.batch_size).enumerate() {
            let kg_batch = kg_pairs.chunks(kg_chunk).nth(step).unwrap_or(&[]);
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let kg_vars = kg_params.as_ref().map(|k| k.register(&mut tape, true));
            let batch = Batch {
                triples,
                kg: kg_batch,
            };
            let loss = match batch_objective(&mut tape, index, model, &vars, kg_vars.as_ref(), batch, weights) {
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        loss: f64::NAN,
                    })
                }
                other => other?,
            };
            let total = tape.value(loss.total).item().to_f64_lossless();
            if !total.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: total });
            }
            sum_hbpr += tape.value(loss.hbpr).item().to_f64_lossless();
            sum_reg += tape.value(loss.reg).item().to_f64_lossless();
            if let Some(k) = loss.kg {
                sum_kg += tape.value(k).item().to_f64_lossless();
            }
            let grads = tape.backward(loss.total)?;
            sgd_step(params.tensors_mut(), &vars.all(), &grads, lr);
            if let (Some(kp), Some(kv)) = (kg_params.as_mut(), kg_vars.as_ref()) {
                sgd_step(kp.tensors_mut(), &kv.all(), &grads, lr);
            }
        }

        let n = steps as f64;
        let (hbpr, reg, kg) = (sum_hbpr / n, sum_reg / n, sum_kg / n);
        let validation = match inputs.validation {
            Some((val, spec)) => Some(evaluate(graph, val, model, &params, spec)?),
            None => None,
        };
        if let (Some(table), Some((_, spec))) = (&validation, inputs.validation) {
            let k = spec.ks.first().copied().unwrap_or(10);
            let value = table.get(&cfg.target_behavior, k).map_or(0.0, |r| r.ndcg);
            if best.as_ref().is_none_or(|(v, _)| value > *v) {
                best = Some((value, snapshot(&params, &kg_params)));
                report.best_epoch = Some(epoch);
                if let Some(dir) = inputs.out_dir {
                    write_checkpoint(dir.join("best.ckpt"), &best.as_ref().expect("just set").1)?;
                }
            }
        }
        let record = EpochRecord {
            epoch,
            hbpr,
            reg,
            kg,
            total: hbpr + cfg.lambda_reg * reg + cfg.kg_weight * kg,
            steps,
            triples: epoch_triples.triples.len(),
            skipped: epoch_triples.skipped,
            kg_skipped,
            subgraph_nodes: subgraph.as_ref().map(|s| s.num_nodes()),
            validation,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: hbpr {:.5} reg {:.3} kg {:.5} ({} triples, {:.2}s)",
            record.hbpr,
            record.reg,
            record.kg,
            record.triples,
            record.wall_clock_secs
        );
        report.epochs.push(record);
        if let Some(dir) = inputs.out_dir {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                write_checkpoint(
                    dir.join(format!("epoch-{:04}.ckpt", epoch + 1)),
                    &snapshot(&params, &kg_params),
                )?;
            }
        }
    }

    let checkpoint = snapshot(&params, &kg_params);
    if let Some(dir) = inputs.out_dir {
        write_checkpoint(dir.join("final.ckpt"), &checkpoint)?;
        report.write_jsonl(dir.join("report.jsonl"))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        best: best.map(|(_, c)| c),
        report,
    })
}

/// Central-difference check of [`batch_objective`] with respect to every
/// model (and KG) parameter entry.
#[allow(clippy::too_many_arguments)]
pub fn check_objective_gradients(
    graph: &MultiBehaviorGraph,
    model: &ModelConfig,
    params: &ModelParams<f64>,
    kg: Option<&KgParams<f64>>,
    batch: Batch<'_>,
    weights: LossWeights,
    epsilon: f64,
    tolerance: f64,
) -> Result<crate::tensor::GradCheckReport> {
    let index = PropagationIndex::for_config(graph, model)?;
    let mut tensors: Vec<crate::tensor::Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    let n = tensors.len();
    if let Some(k) = kg {
        tensors.extend(k.tensors().into_iter().cloned());
    }
    crate::tensor::grad_check(
        &tensors,
        |tape: &mut Tape<f64>, vars: &[crate::tensor::Var]| -> Result<crate::tensor::Var> {
            let pv = params.bind(&vars[..n]);
            let kv = kg.map(|k| k.bind(&vars[n..]));
            Ok(batch_objective(tape, &index, model, &pv, kv.as_ref(), batch, weights)?.total)
        },
        epsilon,
        tolerance,
    )
}

/// Multi-task and single-task runs that differ only in the triple set.
#[derive(Debug, Clone)]
pub struct Ablation<T> {
    pub multi_task: TrainOutcome<T>,
    pub single_task: TrainOutcome<T>,
}

pub fn ablate<T: Scalar>(inputs: TrainInputs<'_>, model: &ModelConfig, cfg: &TrainConfig) -> Result<Ablation<T>> {
    let multi = TrainConfig {
        single_task: false,
        ..cfg.clone()
    };
    let single = TrainConfig {
        single_task: true,
        ..cfg.clone()
    };
    let no_output = TrainInputs { out_dir: None, ..inputs };
    Ok(Ablation {
        multi_task: train(no_output, model, &multi)?,
        single_task: train(no_output, model, &single)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{BehaviorId, Interaction};
    use crate::model::{forward_values, score};

    fn one_behavior_graph() -> MultiBehaviorGraph {
        MultiBehaviorGraph::build(&[Interaction::new(0, 0, 0, None)], 1, 2, vec!["buy".into()]).unwrap()
    }

    fn one_behavior_configs() -> (ModelConfig, TrainConfig) {
        let model = ModelConfig {
            dim: 4,
            num_layers: 1,
            behaviors: vec!["buy".into()],
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 30,
            priority: vec!["buy".into()],
            learning_rate: 0.1,
            ..Default::default()
        };
        (model, cfg)
    }

    #[test]
    fn training_widens_the_margin() {
        let g = one_behavior_graph();
        let (model, cfg) = one_behavior_configs();
        let out = train::<f64>(TrainInputs::new(&g), &model, &cfg).unwrap();
        let p = &out.checkpoint.params;
        let index = PropagationIndex::for_config(&g, &model).unwrap();
        let o = forward_values(&index, &model, p).unwrap();
        assert!(score(0, BehaviorId(0), 0, &o, p, 0.5) > score(0, BehaviorId(0), 1, &o, p, 0.5));
        let first = out.report.epochs.first().unwrap().hbpr;
        let last = out.report.epochs.last().unwrap().hbpr;
        assert!(last < first);
    }

    #[test]
    fn config_validation() {
        let vocab = vec!["buy".to_string()];
        let (_, cfg) = one_behavior_configs();
        assert!(cfg.validate(&vocab).is_ok());
        let zero_lr = TrainConfig {
            learning_rate: 0.0,
            ..cfg.clone()
        };
        assert!(zero_lr.validate(&vocab).is_err());
        let negative_reg = TrainConfig {
            lambda_reg: -1.0,
            ..cfg.clone()
        };
        assert!(negative_reg.validate(&vocab).is_err());
        let no_neg = TrainConfig {
            negatives: vec![0],
            ..cfg
        };
        assert!(no_neg.validate(&vocab).is_err());
    }

    #[test]
    fn single_task_without_target_edges_fails() {
        let g = MultiBehaviorGraph::build(
            &[Interaction::new(0, 0, 0, None)],
            1,
            2,
            vec!["view".into(), "buy".into()],
        )
        .unwrap();
        let model = ModelConfig {
            dim: 2,
            num_layers: 1,
            behaviors: vec!["view".into(), "buy".into()],
            ..Default::default()
        };
        let cfg = TrainConfig {
            epochs: 1,
            priority: vec!["buy".into(), "view".into()],
            single_task: true,
            ..Default::default()
        };
        assert!(matches!(
            train::<f64>(TrainInputs::new(&g), &model, &cfg),
            Err(Error::EmptyTriples(_))
        ));
    }
}

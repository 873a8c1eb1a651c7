use std::path::Path;

use hmgn::eval::evaluate;
use hmgn::graph::{load_interactions, read_graph, temporal_split, write_graph, StoredGraph, TemporalSplit};
use hmgn::model::{load_kg_triples, read_checkpoint, KgParams, ModelConfig, ModelParams, Paradigm};
use hmgn::sampler::{
    behavior_distribution_report, sample_hbpr_triples, subgraph_hbpr_training_set, write_subgraph,
    write_triples, PriorityRank,
};
use hmgn::synth::{generate, SynthConfig};
use hmgn::train::{check_objective_gradients, draw_kernel_users, Batch, KgPair, LossWeights, TrainInputs};
use hmgn::MultiBehaviorGraph;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{KgPaths, RunConfig};
use crate::manifest::finish;
use crate::{EvalArgs, Failure, GradCheckArgs, IngestArgs, SampleArgs, SplitArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn load_graph(dir: &Path, vocabulary: &[String]) -> Result<StoredGraph, Failure> {
    let stored = read_graph(dir)?;
    if stored.graph.behaviors() != vocabulary {
        return Err(Failure::Usage(format!(
            "{} has behaviors {:?}, the config expects {:?}",
            dir.display(),
            stored.graph.behaviors(),
            vocabulary
        )));
    }
    Ok(stored)
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<(), Failure> {
    let s = &mut cfg.synth;
    s.num_users = a.users.unwrap_or(s.num_users);
    s.num_items = a.items.unwrap_or(s.num_items);
    s.p_view = a.p_view.unwrap_or(s.p_view);
    s.p_cart = a.p_cart.unwrap_or(s.p_cart);
    s.p_buy = a.p_buy.unwrap_or(s.p_buy);
    s.seed = a.seed.unwrap_or(s.seed);
    let data = generate(&cfg.synth)?;
    create_dir(&a.out)?;
    data.write_csv(a.out.join("interactions.csv"))?;
    data.write_kg(a.out.join("kg_triples.csv"), a.out.join("kg_relations.txt"))?;
    let counts = data.behavior_counts().iter().fold([0; 3], |acc, c| [acc[0] + c[0], acc[1] + c[1], acc[2] + c[2]]);
    println!(
        "{} users, {} items: view {} cart {} buy {}",
        data.num_users, data.num_items, counts[0], counts[1], counts[2]
    );
    finish(&a.out, "synth", Some(cfg.synth.seed), &cfg)
}

pub fn ingest(cfg: RunConfig, a: IngestArgs) -> Result<(), Failure> {
    cfg.validate()?;
    let loaded = load_interactions(&a.input, &cfg.schema)?;
    let graph = MultiBehaviorGraph::build(
        &loaded.interactions,
        loaded.users.len(),
        loaded.items.len(),
        loaded.behaviors.clone(),
    )?;
    write_graph(&a.out, &graph, Some((&loaded.users, &loaded.items)))?;
    println!(
        "{} rows, {} users, {} items, edges per behavior {:?}",
        loaded.rows_read,
        graph.num_users(),
        graph.num_items(),
        loaded.counts
    );
    finish(&a.out, "ingest", None, &cfg)
}

pub fn split(mut cfg: RunConfig, a: SplitArgs) -> Result<(), Failure> {
    let split = match (a.train_end, a.val_end, cfg.split) {
        (Some(train_end), Some(val_end), _) => TemporalSplit { train_end, val_end },
        (t, v, Some(s)) => TemporalSplit {
            train_end: t.unwrap_or(s.train_end),
            val_end: v.unwrap_or(s.val_end),
        },
        _ => return Err(Failure::Usage("split needs train_end and val_end".into())),
    };
    cfg.split = Some(split);
    cfg.validate()?;
    let stored = load_graph(&a.graph, &cfg.schema.behaviors)?;
    let g = &stored.graph;
    let parts = temporal_split(&g.interactions(), split)?;
    let ids = stored.users.as_ref().zip(stored.items.as_ref());
    for (name, edges) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
        let part = MultiBehaviorGraph::build(edges, g.num_users(), g.num_items(), g.behaviors().to_vec())?;
        write_graph(a.out.join(name), &part, ids)?;
        println!("{name}: {} edges", part.total_edges());
    }
    finish(&a.out, "split", None, &cfg)
}

pub fn sample_subgraph(mut cfg: RunConfig, a: SampleArgs) -> Result<(), Failure> {
    let s = &mut cfg.sample;
    s.kernel_users = a.kernel_users.unwrap_or(s.kernel_users);
    s.hops = a.hops.unwrap_or(s.hops);
    s.fanouts = a.fanouts.unwrap_or(std::mem::take(&mut s.fanouts));
    s.seed = a.seed.unwrap_or(s.seed);
    cfg.validate()?;
    let s = &cfg.sample;
    let stored = load_graph(&a.graph, &cfg.schema.behaviors)?;
    let g = &stored.graph;
    let rank = PriorityRank::from_names(&cfg.train.priority, g.behaviors())?;

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let kernel = draw_kernel_users(g, s.kernel_users, &mut rng);
    if kernel.is_empty() {
        return Err(Failure::Runtime("the graph has no user with an edge".into()));
    }
    let sub = hmgn::sampler::sample_subgraph(g, &kernel, s.hops, &s.fanouts, s.seed)?;
    let triples = subgraph_hbpr_training_set(&sub, &rank, &s.negatives, s.seed)?;
    create_dir(&a.out)?;
    write_subgraph(a.out.join("subgraph"), &sub)?;
    write_triples(a.out.join("triples.csv"), &triples.triples, g.behaviors())?;
    let report = behavior_distribution_report(&sub.graph, Some(g));
    write_json(&a.out.join("distribution.json"), &report)?;
    println!(
        "kept {} of {} users and {} of {} items; {} kernel edges, {} triples",
        sub.users.len(),
        g.num_users(),
        sub.items.len(),
        g.num_items(),
        sub.kernel.total_edges(),
        triples.triples.len()
    );
    finish(&a.out, "sample-subgraph", Some(s.seed), &cfg)
}

pub fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<(), Failure> {
    let (m, t) = (&mut cfg.model, &mut cfg.train);
    m.dim = a.dim.unwrap_or(m.dim);
    m.num_layers = a.layers.unwrap_or(m.num_layers);
    m.paradigm = a.paradigm.unwrap_or(m.paradigm);
    m.use_temporal |= a.temporal;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.learning_rate = a.lr.unwrap_or(t.learning_rate);
    t.lambda_reg = a.lambda.unwrap_or(t.lambda_reg);
    t.batch_size = a.batch_size.unwrap_or(t.batch_size);
    t.seed = a.seed.unwrap_or(t.seed);
    t.single_task |= a.single_task;
    if let (Some(triples), Some(relations)) = (a.kg_triples, a.kg_relations) {
        cfg.kg = Some(KgPaths { triples, relations });
        cfg.train.kg_enabled = true;
    }
    if cfg.train.kg_enabled && cfg.kg.is_none() {
        return Err(Failure::Usage("train.kg_enabled needs kg.triples and kg.relations".into()));
    }
    cfg.validate()?;

    let stored = load_graph(&a.train, &cfg.schema.behaviors)?;
    let val = a.val.as_deref().map(|d| load_graph(d, &cfg.schema.behaviors)).transpose()?;
    let kg = match (&cfg.kg, cfg.train.kg_enabled) {
        (Some(p), true) => {
            let items = stored
                .items
                .as_ref()
                .ok_or_else(|| Failure::Runtime("the training graph carries no item ids to join the KG on".into()))?;
            Some(load_kg_triples(&p.triples, &p.relations, items)?)
        }
        _ => None,
    };
    create_dir(&a.out)?;
    let inputs = TrainInputs {
        graph: &stored.graph,
        validation: val.as_ref().map(|v| (&v.graph, &cfg.eval)),
        kg: kg.as_ref(),
        out_dir: Some(&a.out),
    };
    let outcome = hmgn::train::train::<f64>(inputs, &cfg.model, &cfg.train)?;
    if let Some(last) = outcome.report.epochs.last() {
        println!(
            "{} epochs, final ranking loss {:.5}, best epoch {:?}",
            outcome.report.epochs.len(),
            last.hbpr,
            outcome.report.best_epoch
        );
    }
    finish(&a.out, "train", Some(cfg.train.seed), &cfg)
}

pub fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<(), Failure> {
    if let Some(ks) = a.ks {
        cfg.eval.ks = ks;
    }
    let ckpt = read_checkpoint::<f64>(&a.checkpoint)?;
    cfg.model = ckpt.config.clone();
    cfg.validate()?;
    let train = load_graph(&a.train, &cfg.schema.behaviors)?;
    let test = load_graph(&a.test, &cfg.schema.behaviors)?;
    let table = evaluate(&train.graph, &test.graph, &ckpt.config, &ckpt.params, &cfg.eval)?;
    create_dir(&a.out)?;
    table.write_json(a.out.join("metrics.json"))?;
    table.write_csv(a.out.join("metrics.csv"))?;
    for r in &table.rows {
        println!(
            "{:>8} @{:<4} recall {:.4}  ndcg {:.4}  ({} users)",
            r.behavior, r.k, r.recall, r.ndcg, r.n_users
        );
    }
    finish(&a.out, "eval", Some(ckpt.seed), &cfg)?;
    if !table.is_finite() {
        return Err(Failure::Check("metrics contain non-finite values".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct GradCase {
    paradigm: Paradigm,
    num_layers: usize,
    temporal: bool,
    kg: bool,
    report: hmgn::tensor::GradCheckReport,
}

/// A tiny synthetic graph on which every behavior has an edge and at least
/// one ranking triple exists.
fn tiny_graph(seed: u64) -> Result<(hmgn::synth::SynthData, MultiBehaviorGraph), Failure> {
    for s in seed..seed + 100 {
        let cfg = SynthConfig {
            num_users: 4,
            num_items: 5,
            num_categories: 2,
            categories_per_user: 1,
            preferred_per_user: 3,
            noise_views: 1,
            time_span: 100,
            seed: s,
            ..Default::default()
        };
        let data = generate(&cfg)?;
        let g = MultiBehaviorGraph::build(&data.interactions, 4, 5, hmgn::synth::behaviors())?;
        if g.behavior_ids().all(|b| g.num_edges(b) > 0) {
            return Ok((data, g));
        }
    }
    Err(Failure::Runtime("no tiny graph with every behavior".into()))
}

pub fn grad_check(cfg: RunConfig, a: GradCheckArgs) -> Result<(), Failure> {
    let (data, g) = tiny_graph(a.seed)?;
    let rank = PriorityRank::from_names(&["buy", "cart", "view"], g.behaviors())?;
    let triples = sample_hbpr_triples(&g, &rank, &[1], a.seed, None)?.triples;
    let kg_data = data.kg_data();
    let pairs: Vec<KgPair> = kg_data
        .triples
        .iter()
        .map(|&t| KgPair {
            triple: t,
            // the other of the two categories
            corrupt_tail: 2 * data.num_items + 1 - t.tail,
        })
        .collect();
    let weights = LossWeights {
        lambda_reg: 0.05,
        kg_weight: 0.7,
    };

    let mut cases = Vec::new();
    for paradigm in [Paradigm::Intra, Paradigm::Inter] {
        for num_layers in [1, 2] {
            for temporal in [false, true] {
                for kg in [false, true] {
                    let model = ModelConfig {
                        dim: 4,
                        num_layers,
                        paradigm,
                        use_temporal: temporal,
                        ..Default::default()
                    };
                    let params = ModelParams::<f64>::init(&model, g.num_users(), g.num_items(), a.seed);
                    let kg_params = kg.then(|| KgParams::<f64>::init(&kg_data, 4, 3, a.seed + 1));
                    let batch = Batch {
                        triples: &triples,
                        kg: if kg { &pairs } else { &[] },
                    };
                    let report = check_objective_gradients(
                        &g,
                        &model,
                        &params,
                        kg_params.as_ref(),
                        batch,
                        weights,
                        1e-6,
                        a.tolerance,
                    )?;
                    cases.push(GradCase {
                        paradigm,
                        num_layers,
                        temporal,
                        kg,
                        report,
                    });
                }
            }
        }
    }
    create_dir(&a.out)?;
    write_json(&a.out.join("gradcheck.json"), &cases)?;
    let worst = cases.iter().map(|c| c.report.max_relative_error).fold(0.0, f64::max);
    let failed = cases.iter().filter(|c| !c.report.passed).count();
    println!(
        "{} configurations, {} entries, max relative error {worst:.2e} (tolerance {:.0e})",
        cases.len(),
        cases.iter().map(|c| c.report.checked).sum::<usize>(),
        a.tolerance
    );
    finish(&a.out, "grad-check", Some(a.seed), &cfg)?;
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} configurations exceed the tolerance")));
    }
    Ok(())
}

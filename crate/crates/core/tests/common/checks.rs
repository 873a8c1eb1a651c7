//! Library-versus-oracle comparisons shared by the integration tests and
//! the acceptance runner. Each returns the worst error it saw.

use hmgn::graph::{BehaviorId, Interaction, MultiBehaviorGraph, Side};
use hmgn::model::{
    forward_values, inter_layer, intra_layer, kg_score, kg_scores, score, score_batch, KgParams,
    LayerOutput, LayerVars, ModelConfig, Paradigm, PropagationIndex, TimestampNumbering,
};
use hmgn::sampler::{sample_hbpr_triples, HbprTriple, PriorityRank};
use hmgn::tensor::{grad_check, GradCheckReport, Tape, Tensor, Var};
use hmgn::train::{batch_objective, hbpr_loss, Batch, KgPair, LossWeights};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

fn numbering(graph: &MultiBehaviorGraph, cfg: &ModelConfig) -> Option<TimestampNumbering> {
    cfg.use_temporal.then(|| TimestampNumbering::from_graph(graph))
}

pub fn rank() -> PriorityRank {
    PriorityRank::from_names(&["buy", "cart", "view"], &vocab()).unwrap()
}

fn paradigm_instance(seed: u64, paradigm: Paradigm) -> (MultiBehaviorGraph, ModelConfig, hmgn::ModelParams) {
    let mut r = rng(seed);
    let graph = random_graph(&mut r, 6, 6, 0.3);
    let dim = [2, 4, 6][r.random_range(0..3)];
    let cfg = config(dim, 2, paradigm, r.random_bool(0.5));
    let params = random_params(&cfg, graph.num_users(), graph.num_items(), seed);
    (graph, cfg, params)
}

/// One intra layer per behavior and a two-layer forward pass.
pub fn intra_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let (graph, cfg, params) = paradigm_instance(seed + k, Paradigm::Intra);
        let num = numbering(&graph, &cfg);
        let index = PropagationIndex::for_config(&graph, &cfg).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let inputs = LayerVars {
            users: vars.user_emb,
            items: vars.item_emb,
        };
        let (u0, i0) = (to_mat(&params.user_emb), to_mat(&params.item_emb));
        for b in graph.behavior_ids() {
            let out = intra_layer(&mut tape, &index, inputs, &vars.layers[0].behaviors[b.0], b).unwrap();
            let (nu, ni) = naive_intra(&graph, b, &u0, &i0, &params.layers[0].behaviors[b.0], num.as_ref());
            worst = worst
                .max(max_abs_diff(&to_mat(tape.value(out.users)), &nu))
                .max(max_abs_diff(&to_mat(tape.value(out.items)), &ni));
        }
        worst = worst.max(forward_error(&graph, &cfg, &params));
    }
    worst
}

/// One inter layer and a two-layer forward pass.
pub fn inter_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let (graph, cfg, params) = paradigm_instance(seed + k, Paradigm::Inter);
        let num = numbering(&graph, &cfg);
        let index = PropagationIndex::for_config(&graph, &cfg).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let inputs = LayerVars {
            users: vars.user_emb,
            items: vars.item_emb,
        };
        let out = inter_layer(&mut tape, &index, inputs, &vars.layers[0]).unwrap();
        let (nu, ni) = naive_inter(
            &graph,
            &to_mat(&params.user_emb),
            &to_mat(&params.item_emb),
            &params.layers[0],
            num.as_ref(),
        );
        worst = worst
            .max(max_abs_diff(&to_mat(tape.value(out.output.users)), &nu))
            .max(max_abs_diff(&to_mat(tape.value(out.output.items)), &ni));
        worst = worst.max(forward_error(&graph, &cfg, &params));
    }
    worst
}

fn forward_error(graph: &MultiBehaviorGraph, cfg: &ModelConfig, params: &hmgn::ModelParams) -> f64 {
    let index = PropagationIndex::for_config(graph, cfg).unwrap();
    let out = forward_values(&index, cfg, params).unwrap();
    let (nu, ni) = naive_forward(graph, cfg, params);
    max_abs_diff(&to_mat(&out.users), &nu).max(max_abs_diff(&to_mat(&out.items), &ni))
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar and batched scores against the coordinate-wise formula.
pub fn score_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut r = rng(seed + k);
        let (nu, ni, d) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..9));
        let cfg = ModelConfig {
            dim: d,
            num_layers: 1,
            ..config(d, 1, Paradigm::Intra, false)
        };
        let mut params = random_params(&cfg, nu, ni, seed + k);
        params.behavior_diag = random_matrix(&mut r, 3, d);
        let output = LayerOutput {
            users: random_matrix(&mut r, nu, d),
            items: random_matrix(&mut r, ni, d),
        };
        let alpha: f64 = r.random();
        let mut us = Vec::new();
        let mut bs = Vec::new();
        let mut is = Vec::new();
        let mut expected = Vec::new();
        for u in 0..nu {
            for b in 0..3 {
                for i in 0..ni {
                    let want = naive_score(output.users.row(u), output.items.row(i), params.behavior_diag.row(b), alpha);
                    let got = score(u, BehaviorId(b), i, &output, &params, alpha);
                    worst = worst.max((got - want).abs());
                    us.push(u);
                    bs.push(b);
                    is.push(i);
                    expected.push(want);
                }
            }
        }
        let mut tape = Tape::new();
        let lv = LayerVars {
            users: tape.constant(output.users.clone()),
            items: tape.constant(output.items.clone()),
        };
        let diag = tape.constant(params.behavior_diag.clone());
        let s = score_batch(&mut tape, lv, diag, us.into(), bs.into(), is.into(), alpha).unwrap();
        for (got, want) in tape.value(s).data().iter().zip(&expected) {
            worst = worst.max((got - want).abs());
        }
    }
    worst
}

/// Translation distances, scalar and batched, with a random relation width.
pub fn kg_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let mut r = rng(seed + k);
        let ni = r.random_range(1..6);
        let d = r.random_range(1..6);
        let cfg = config(d, 1, Paradigm::Intra, false);
        let params = random_params(&cfg, 1, ni, seed + k);
        let extra = r.random_range(1..4);
        let data = random_kg(&mut r, ni, extra);
        let kg = KgParams::init(&data, d, r.random_range(1..5), seed + k);
        let mut triples = data.triples.clone();
        // item-to-item and entity-to-item directions as well
        triples.push(KgTriple {
            head: ni,
            relation: 0,
            tail: r.random_range(0..ni),
        });
        triples.push(KgTriple {
            head: r.random_range(0..ni),
            relation: 0,
            tail: r.random_range(0..ni),
        });
        let mut tape = Tape::new();
        let item_emb = tape.constant(params.item_emb.clone());
        let kv = kg.register(&mut tape, false);
        let batched = kg_scores(&mut tape, item_emb, &kv, &triples).unwrap();
        for (t, got_b) in triples.iter().zip(tape.value(batched).data()) {
            let want = naive_kg_score(*t, &params, &kg);
            let got = kg_score(t.head, t.relation, t.tail, &params, &kg).unwrap();
            worst = worst.max((got - want).abs()).max((got_b - want).abs());
        }
    }
    worst
}

/// Summed ranking loss from values and from the tape objective at zero
/// regularization, both against the naive sum.
pub fn hbpr_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for k in 0..instances {
        let (graph, cfg, params) = paradigm_instance(seed + k, if k % 2 == 0 { Paradigm::Intra } else { Paradigm::Inter });
        let sample = sample_hbpr_triples(&graph, &rank(), &[2], seed + k, None).unwrap();
        if sample.triples.is_empty() {
            continue;
        }
        compared += 1;
        let index = PropagationIndex::for_config(&graph, &cfg).unwrap();
        let out = forward_values(&index, &cfg, &params).unwrap();
        let want = naive_hbpr(
            &sample.triples,
            &to_mat(&out.users),
            &to_mat(&out.items),
            &params.behavior_diag,
            cfg.alpha,
        );
        let got = hbpr_loss(&sample.triples, &out, &params, cfg.alpha).unwrap();

        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let batch = Batch {
            triples: &sample.triples,
            kg: &[],
        };
        let weights = LossWeights {
            lambda_reg: 0.0,
            kg_weight: 0.0,
        };
        let lv = batch_objective(&mut tape, &index, &cfg, &vars, None, batch, weights).unwrap();
        let taped = tape.value(lv.hbpr).item() * sample.triples.len() as f64;
        worst = worst.max((got - want).abs()).max((taped - want).abs());
    }
    assert!(compared > 0, "no instance produced triples");
    worst
}

fn segment_sums(weights: &[f64], segment: impl Iterator<Item = usize>, n: usize) -> Vec<f64> {
    let mut sums = vec![0.0; n];
    for (w, s) in weights.iter().zip(segment) {
        sums[s] += w;
    }
    sums
}

fn normalization_gap(weights: &Tensor<f64>, segment: Vec<usize>, n: usize) -> f64 {
    let mut present = vec![false; n];
    for &s in &segment {
        present[s] = true;
    }
    let sums = segment_sums(weights.data(), segment.into_iter(), n);
    let negative = weights.data().iter().fold(0.0f64, |m, &w| m.max(-w));
    sums.iter()
        .zip(&present)
        .filter(|(_, &p)| p)
        .map(|(s, _)| (s - 1.0).abs())
        .fold(negative, f64::max)
}

/// For every attention call, weights over each nonempty neighborhood are
/// nonnegative and sum to one. Returns the worst deviation.
pub fn attention_normalization_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let paradigm = if k % 2 == 0 { Paradigm::Intra } else { Paradigm::Inter };
        let (graph, cfg, params) = paradigm_instance(seed + k, paradigm);
        let index = PropagationIndex::<f64>::for_config(&graph, &cfg).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let inputs = LayerVars {
            users: vars.user_emb,
            items: vars.item_emb,
        };
        let (nu, ni) = (graph.num_users(), graph.num_items());
        match paradigm {
            Paradigm::Intra => {
                for b in graph.behavior_ids() {
                    let out = intra_layer(&mut tape, &index, inputs, &vars.layers[0].behaviors[b.0], b).unwrap();
                    let users: Vec<usize> = graph.edges(b).map(|x| x.user).collect();
                    let items: Vec<usize> = graph.edges(b).map(|x| x.item).collect();
                    worst = worst
                        .max(normalization_gap(tape.value(out.user_attention), users, nu))
                        .max(normalization_gap(tape.value(out.item_attention), items, ni));
                }
            }
            Paradigm::Inter => {
                let out = inter_layer(&mut tape, &index, inputs, &vars.layers[0]).unwrap();
                let pairs: Vec<(usize, usize)> = graph.union_pairs().collect();
                let pair_id = |u: usize, i: usize| pairs.binary_search(&(u, i)).unwrap();
                let records: Vec<usize> = graph
                    .behavior_ids()
                    .flat_map(|b| graph.edges(b).map(|x| pair_id(x.user, x.item)).collect::<Vec<_>>())
                    .collect();
                let np = pairs.len();
                worst = worst
                    .max(normalization_gap(tape.value(out.user_behavior_attention), records.clone(), np))
                    .max(normalization_gap(tape.value(out.item_behavior_attention), records, np))
                    .max(normalization_gap(
                        tape.value(out.user_neighbor_attention),
                        pairs.iter().map(|p| p.0).collect(),
                        nu,
                    ))
                    .max(normalization_gap(
                        tape.value(out.item_neighbor_attention),
                        pairs.iter().map(|p| p.1).collect(),
                        ni,
                    ));
            }
        }
    }
    worst
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let mut out = t.clone();
    for (old, &new) in perm.iter().enumerate() {
        out.row_mut(new).copy_from_slice(t.row(old));
    }
    out
}

/// Relabels users and items at random and checks that the two-layer output
/// moves with the labels. Alternates paradigms and temporal encoding.
pub fn permutation_error(instances: u64, seed: u64) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..instances {
        let paradigm = if k % 2 == 0 { Paradigm::Intra } else { Paradigm::Inter };
        let (graph, cfg, params) = paradigm_instance(seed + k, paradigm);
        let mut r = rng(seed + k + 7);
        let (nu, ni) = (graph.num_users(), graph.num_items());
        let mut pu: Vec<usize> = (0..nu).collect();
        let mut pi: Vec<usize> = (0..ni).collect();
        pu.shuffle(&mut r);
        pi.shuffle(&mut r);
        let edges: Vec<Interaction> = graph
            .interactions()
            .into_iter()
            .map(|x| Interaction::new(pu[x.user], pi[x.item], x.behavior.0, x.timestamp))
            .collect();
        let relabeled = MultiBehaviorGraph::build(&edges, nu, ni, vocab()).unwrap();
        let mut moved = params.clone();
        moved.user_emb = permute_rows(&params.user_emb, &pu);
        moved.item_emb = permute_rows(&params.item_emb, &pi);

        let a = forward_values(&PropagationIndex::for_config(&graph, &cfg).unwrap(), &cfg, &params).unwrap();
        let b = forward_values(&PropagationIndex::for_config(&relabeled, &cfg).unwrap(), &cfg, &moved).unwrap();
        let expected_users = to_mat(&permute_rows(&a.users, &pu));
        let expected_items = to_mat(&permute_rows(&a.items, &pi));
        worst = worst
            .max(max_abs_diff(&to_mat(&b.users), &expected_users))
            .max(max_abs_diff(&to_mat(&b.items), &expected_items));
    }
    worst
}

#[derive(Debug, Clone, Copy)]
pub struct GradCase {
    pub paradigm: Paradigm,
    pub layers: usize,
    pub dim: usize,
    pub kg: bool,
    pub temporal: bool,
}

impl GradCase {
    pub fn all() -> Vec<GradCase> {
        let mut out = Vec::new();
        for paradigm in [Paradigm::Intra, Paradigm::Inter] {
            for layers in [1, 2] {
                for dim in [4, 8] {
                    for kg in [false, true] {
                        for temporal in [false, true] {
                            out.push(GradCase {
                                paradigm,
                                layers,
                                dim,
                                kg,
                                temporal,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

fn grad_graph(seed: u64) -> MultiBehaviorGraph {
    let mut r = rng(seed);
    loop {
        let g = random_graph(&mut r, 4, 5, 0.35);
        if g.num_users() >= 2 && g.num_items() >= 3 && g.behavior_ids().all(|b| g.num_edges(b) > 0) {
            let sample = sample_hbpr_triples(&g, &rank(), &[1], seed, None).unwrap();
            if !sample.triples.is_empty() {
                return g;
            }
        }
    }
}

/// Central differences on the full mini-batch objective (ranking loss,
/// regularization and, when enabled, the KG term).
pub fn gradient_check(case: GradCase, seed: u64) -> GradCheckReport {
    let graph = grad_graph(seed);
    let cfg = config(case.dim, case.layers, case.paradigm, case.temporal);
    let params = random_params(&cfg, graph.num_users(), graph.num_items(), seed);
    let index = PropagationIndex::for_config(&graph, &cfg).unwrap();
    let sample = sample_hbpr_triples(&graph, &rank(), &[1], seed, None).unwrap();
    let triples: Vec<HbprTriple> = sample.triples;

    let mut r = rng(seed ^ 0x6b67);
    let (kg, pairs) = if case.kg {
        let data = random_kg(&mut r, graph.num_items(), 2);
        let kg = KgParams::init(&data, case.dim, 3, seed + 1);
        let pairs: Vec<KgPair> = data
            .triples
            .iter()
            .map(|&t| KgPair {
                triple: t,
                corrupt_tail: if t.tail == data.num_items { data.num_items + 1 } else { data.num_items },
            })
            .collect();
        (Some(kg), pairs)
    } else {
        (None, Vec::new())
    };

    let mut tensors: Vec<Tensor<f64>> = params.tensors().into_iter().cloned().collect();
    let n = tensors.len();
    if let Some(kg) = &kg {
        tensors.extend(kg.tensors().into_iter().cloned());
    }
    let weights = LossWeights {
        lambda_reg: 0.05,
        kg_weight: 0.7,
    };
    grad_check(
        &tensors,
        |tape: &mut Tape<f64>, vars: &[Var]| -> hmgn::Result<Var> {
            let pv = params.bind(&vars[..n]);
            let kv = kg.as_ref().map(|k| k.bind(&vars[n..]));
            let batch = Batch {
                triples: &triples,
                kg: &pairs,
            };
            Ok(batch_objective(tape, &index, &cfg, &pv, kv.as_ref(), batch, weights)?.total)
        },
        1e-6,
        1e-4,
    )
    .unwrap()
}

/// Users and items that `graph` connects under `behavior`, for fixtures.
pub fn positives(graph: &MultiBehaviorGraph, user: usize, b: BehaviorId) -> Vec<usize> {
    graph.neighbors(user, Side::User, Some(b)).to_vec()
}

/// Every structural property a sampled sub-graph and its training triples
/// must satisfy, checked edge by edge. Returns the first violation.
pub fn subgraph_violation(
    full: &MultiBehaviorGraph,
    sub: &hmgn::sampler::SubGraph,
    triples: &[HbprTriple],
) -> Option<String> {
    for &u in &sub.kernel_users {
        if !sub.contains_user(u) {
            return Some(format!("kernel user {u} not retained"));
        }
        for b in full.behavior_ids() {
            for &i in full.neighbors(u, Side::User, Some(b)) {
                if sub.kernel_items.binary_search(&i).is_err() || !sub.kernel.has_edge(u, b, i) {
                    return Some(format!("kernel misses one-hop edge ({u}, {b:?}, {i})"));
                }
            }
        }
    }
    for b in full.behavior_ids() {
        for x in full.edges(b) {
            let inside = sub.contains_user(x.user) && sub.contains_item(x.item);
            if inside != sub.graph.has_edge(x.user, b, x.item) {
                return Some(format!("edge closure broken at {x:?}"));
            }
            if sub.kernel.has_edge(x.user, b, x.item) && sub.kernel_users.binary_search(&x.user).is_err() {
                return Some(format!("kernel edge {x:?} leaves the kernel users"));
            }
        }
        for x in sub.graph.edges(b) {
            if !full.has_edge(x.user, b, x.item) {
                return Some(format!("sub-graph invents {x:?}"));
            }
        }
    }
    for t in triples {
        if !sub.kernel.has_edge(t.user, t.behavior, t.pos) {
            return Some(format!("positive outside the kernel: {t:?}"));
        }
        if !sub.contains_item(t.neg) {
            return Some(format!("negative outside the sub-graph: {t:?}"));
        }
        if !hmgn::sampler::is_hierarchy_compliant(&sub.graph, &rank(), t) {
            return Some(format!("hierarchy violated: {t:?}"));
        }
    }
    None
}

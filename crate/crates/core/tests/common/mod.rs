//! Random small instances and naive-loop reference implementations.
#![allow(dead_code)]

use hmgn::graph::{BehaviorId, Interaction, MultiBehaviorGraph, Side};
use hmgn::model::{
    Attention, KgData, KgParams, KgTriple, LayerParams, ModelConfig, ModelParams, Paradigm, TimestampNumbering,
};
use hmgn::sampler::HbprTriple;
use hmgn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn vocab() -> Vec<String> {
    ["view", "cart", "buy"].iter().map(|s| s.to_string()).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Up to `max_users` × `max_items` nodes, three behaviors, each edge present
/// with probability `p`, timestamps in `0..10`.
pub fn random_graph(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize, p: f64) -> MultiBehaviorGraph {
    let nu = rng.random_range(1..=max_users);
    let ni = rng.random_range(1..=max_items);
    let mut edges = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            for b in 0..3 {
                if rng.random_bool(p) {
                    edges.push(Interaction::new(u, i, b, Some(rng.random_range(0..10))));
                }
            }
        }
    }
    MultiBehaviorGraph::build(&edges, nu, ni, vocab()).unwrap()
}

pub fn config(dim: usize, layers: usize, paradigm: Paradigm, temporal: bool) -> ModelConfig {
    ModelConfig {
        dim,
        num_layers: layers,
        paradigm,
        alpha: 0.5,
        use_temporal: temporal,
        behaviors: vocab(),
    }
}

/// Initialized parameters with perturbed behavior diagonals.
pub fn random_params(cfg: &ModelConfig, nu: usize, ni: usize, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::init(cfg, nu, ni, seed);
    let mut r = rng(seed ^ 0xd1a6);
    for x in p.behavior_diag.data_mut() {
        *x += r.random_range(-0.5..0.5);
    }
    p
}

pub fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// `m · x` for a square matrix.
pub fn mv(m: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| m.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn pe(t: f64, d: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for e in 0..d / 2 {
        out.push((t / 10000f64.powf(2.0 * e as f64 / d as f64)).sin());
        out.push((t / 10000f64.powf((2.0 * e as f64 + 1.0) / d as f64)).cos());
    }
    out
}

/// Plain attention: target `t`, sources `xs`.
fn attend(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, t: &[f64], xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = t.len();
    let qt = mv(q, t);
    let logits: Vec<f64> = xs.iter().map(|x| dot(&qt, &mv(k, x)) * (1.0 / d as f64).sqrt()).collect();
    let w = softmax(&logits);
    let mut out = vec![0.0; d];
    for (wj, x) in w.iter().zip(xs) {
        for (o, y) in out.iter_mut().zip(mv(v, x)) {
            *o += wj * y;
        }
    }
    (out, w)
}

fn source_rows(
    graph: &MultiBehaviorGraph,
    node: usize,
    side: Side,
    b: BehaviorId,
    table: &Mat,
    numbering: Option<&TimestampNumbering>,
    d: usize,
) -> Vec<Vec<f64>> {
    let nbrs = graph.neighbors(node, side, Some(b));
    let ts = graph.neighbor_timestamps(node, side, b);
    nbrs.iter()
        .zip(ts)
        .map(|(&j, t)| match numbering {
            Some(n) => add(&table[j], &pe(n.rank(t.unwrap()) as f64, d)),
            None => table[j].clone(),
        })
        .collect()
}

/// One intra layer for one behavior, both directions.
pub fn naive_intra(
    graph: &MultiBehaviorGraph,
    b: BehaviorId,
    users: &Mat,
    items: &Mat,
    att: &Attention<f64>,
    numbering: Option<&TimestampNumbering>,
) -> (Mat, Mat) {
    let d = users[0].len();
    let side = |n: usize, s: Side, own: &Mat, other: &Mat| -> Mat {
        (0..n)
            .map(|x| {
                if graph.neighbors(x, s, Some(b)).is_empty() {
                    return vec![0.0; d];
                }
                let xs = source_rows(graph, x, s, b, other, numbering, d);
                attend(&att.query, &att.key, &att.value, &own[x], &xs).0
            })
            .collect()
    };
    (
        side(graph.num_users(), Side::User, users, items),
        side(graph.num_items(), Side::Item, items, users),
    )
}

/// Average over the nonzero behavior representations.
pub fn naive_aggregate(parts: &[Mat]) -> Mat {
    let rows = parts[0].len();
    let d = parts[0][0].len();
    (0..rows)
        .map(|r| {
            let present: Vec<&Vec<f64>> = parts.iter().map(|p| &p[r]).filter(|x| x.iter().any(|&v| v != 0.0)).collect();
            let mut out = vec![0.0; d];
            for x in &present {
                for (o, v) in out.iter_mut().zip(x.iter()) {
                    *o += v / present.len() as f64;
                }
            }
            out
        })
        .collect()
}

pub fn naive_inter(
    graph: &MultiBehaviorGraph,
    users: &Mat,
    items: &Mat,
    layer: &LayerParams<f64>,
    numbering: Option<&TimestampNumbering>,
) -> (Mat, Mat) {
    let d = users[0].len();
    let shared = layer.shared.as_ref().unwrap();
    let side = |n: usize, s: Side, own: &Mat, other: &Mat| -> Mat {
        (0..n)
            .map(|x| {
                let nbrs = graph.neighbors(x, s, None);
                if nbrs.is_empty() {
                    return vec![0.0; d];
                }
                let pair_reps: Vec<Vec<f64>> = nbrs
                    .iter()
                    .map(|&j| {
                        let (u, i) = if s == Side::User { (x, j) } else { (j, x) };
                        let mut logits = Vec::new();
                        let mut values = Vec::new();
                        for b in graph.behavior_ids() {
                            if !graph.has_edge(u, b, i) {
                                continue;
                            }
                            let a = &layer.behaviors[b.0];
                            let src = match numbering {
                                Some(n) => add(&other[j], &pe(n.rank(graph.timestamp(u, b, i).unwrap()) as f64, d)),
                                None => other[j].clone(),
                            };
                            logits.push(dot(&mv(&a.query, &own[x]), &mv(&a.key, &src)) * (1.0 / d as f64).sqrt());
                            values.push(mv(&a.value, &src));
                        }
                        let w = softmax(&logits);
                        let mut rep = vec![0.0; d];
                        for (wb, v) in w.iter().zip(&values) {
                            for (o, y) in rep.iter_mut().zip(v) {
                                *o += wb * y;
                            }
                        }
                        rep
                    })
                    .collect();
                attend(&shared.query, &shared.key, &shared.value, &own[x], &pair_reps).0
            })
            .collect()
    };
    (
        side(graph.num_users(), Side::User, users, items),
        side(graph.num_items(), Side::Item, items, users),
    )
}

pub fn naive_forward(graph: &MultiBehaviorGraph, cfg: &ModelConfig, params: &ModelParams<f64>) -> (Mat, Mat) {
    let numbering = cfg.use_temporal.then(|| TimestampNumbering::from_graph(graph));
    let mut users = to_mat(&params.user_emb);
    let mut items = to_mat(&params.item_emb);
    for layer in params.layers.iter().take(cfg.num_layers) {
        (users, items) = match cfg.paradigm {
            Paradigm::Intra => {
                let (mut us, mut is) = (Vec::new(), Vec::new());
                for b in graph.behavior_ids() {
                    let (u, i) = naive_intra(graph, b, &users, &items, &layer.behaviors[b.0], numbering.as_ref());
                    us.push(u);
                    is.push(i);
                }
                (naive_aggregate(&us), naive_aggregate(&is))
            }
            Paradigm::Inter => naive_inter(graph, &users, &items, layer, numbering.as_ref()),
        };
    }
    (users, items)
}

pub fn naive_score(eu: &[f64], ei: &[f64], diag: &[f64], alpha: f64) -> f64 {
    let mut s = 0.0;
    for k in 0..eu.len() {
        s += eu[k] * ((1.0 - alpha) * diag[k] + alpha) * ei[k];
    }
    s
}

fn log_sigmoid(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

pub fn naive_hbpr(triples: &[HbprTriple], users: &Mat, items: &Mat, diag: &Tensor<f64>, alpha: f64) -> f64 {
    triples
        .iter()
        .map(|t| {
            let d = diag.row(t.behavior.0);
            let pos = naive_score(&users[t.user], &items[t.pos], d, alpha);
            let neg = naive_score(&users[t.user], &items[t.neg], d, alpha);
            -log_sigmoid(pos - neg)
        })
        .sum()
}

fn entity(params: &ModelParams<f64>, kg: &KgParams<f64>, id: usize) -> Vec<f64> {
    if id < kg.num_items {
        params.item_emb.row(id).to_vec()
    } else {
        kg.entity_emb.row(id - kg.num_items).to_vec()
    }
}

pub fn naive_kg_score(t: KgTriple, params: &ModelParams<f64>, kg: &KgParams<f64>) -> f64 {
    let w = &kg.relation_proj[t.relation];
    let h = entity(params, kg, t.head);
    let tl = entity(params, kg, t.tail);
    let er = kg.relation_emb.row(t.relation);
    let mut total = 0.0;
    for r in 0..w.rows() {
        let wh: f64 = dot(w.row(r), &h);
        let wt: f64 = dot(w.row(r), &tl);
        let x = wh + er[r] - wt;
        total += x * x;
    }
    total.sqrt()
}

/// Items + `extra` category entities; every item belongs to one category.
pub fn random_kg(rng: &mut ChaCha8Rng, num_items: usize, extra: usize) -> KgData {
    let triples = (0..num_items)
        .map(|i| KgTriple {
            head: i,
            relation: 0,
            tail: num_items + rng.random_range(0..extra),
        })
        .collect();
    KgData {
        triples,
        relations: vec!["belongs_to".into()],
        entities: hmgn::graph::IdMap::from_ids((0..extra).map(|c| format!("c{c}")).collect()),
        num_items,
    }
}

/// Score every item, sort by (score desc, index asc) with exclusions
/// removed, count hits.
pub fn brute_metrics(scores: &[f64], excluded: &[usize], positives: &[usize], k: usize) -> (f64, f64) {
    let mut order: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(i))
        .map(|(i, &s)| (s, i))
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut hits = 0.0;
    let mut dcg = 0.0;
    for (r, &(_, i)) in order.iter().enumerate() {
        if r >= k {
            break;
        }
        if positives.contains(&i) {
            hits += 1.0;
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let m = k.min(positives.len());
    let idcg: f64 = (0..m).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    (hits / m as f64, dcg / idcg)
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

pub mod checks;
pub mod experiment;

//! Hierarchy-compatible negative sampling and multi-behavior sub-graphs.

mod report;
mod subgraph;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{BehaviorId, MultiBehaviorGraph, Side};

pub use report::{behavior_distribution_report, BehaviorDistribution};
pub use subgraph::{read_subgraph, sample_subgraph, subgraph_hbpr_training_set, write_subgraph, KernelManifest, SubGraph};

/// Total order over behaviors, highest priority first. Behaviors missing
/// from the list rank below every listed one and are mutually unordered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityRank {
    order: Vec<BehaviorId>,
}

impl PriorityRank {
    pub fn new(order: Vec<BehaviorId>) -> Result<Self> {
        for (k, b) in order.iter().enumerate() {
            if order[..k].contains(b) {
                return Err(Error::Config(format!("behavior {} repeated in priority rank", b.0)));
            }
        }
        Ok(Self { order })
    }

    /// Resolves behavior names against a vocabulary.
    pub fn from_names<S: AsRef<str>>(order: &[S], vocabulary: &[String]) -> Result<Self> {
        let ids = order
            .iter()
            .map(|name| {
                vocabulary
                    .iter()
                    .position(|v| v == name.as_ref())
                    .map(BehaviorId)
                    .ok_or_else(|| Error::Unknown {
                        kind: "behavior",
                        name: name.as_ref().to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(ids)
    }

    pub fn order(&self) -> &[BehaviorId] {
        &self.order
    }

    pub fn position(&self, b: BehaviorId) -> Option<usize> {
        self.order.iter().position(|&x| x == b)
    }

    /// The behaviors that strictly outrank `b`.
    pub fn higher(&self, b: BehaviorId) -> &[BehaviorId] {
        match self.position(b) {
            Some(p) => &self.order[..p],
            None => &self.order,
        }
    }

    pub fn outranks(&self, a: BehaviorId, b: BehaviorId) -> bool {
        self.higher(b).contains(&a)
    }
}

/// Training quadruple: under `behavior`, `user` prefers `pos` to `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct HbprTriple {
    pub user: usize,
    pub behavior: BehaviorId,
    pub pos: usize,
    pub neg: usize,
}

/// Sampled triples plus the (user, behavior) pairs that had positives but
/// no compatible negative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleSample {
    pub triples: Vec<HbprTriple>,
    pub skipped: Vec<(usize, BehaviorId)>,
}

/// Items that are neither positive for `(user, behavior)` nor positive under
/// any behavior that outranks it.
pub fn compatible_negatives(
    graph: &MultiBehaviorGraph,
    user: usize,
    behavior: BehaviorId,
    rank: &PriorityRank,
) -> Vec<usize> {
    let all: Vec<usize> = (0..graph.num_items()).collect();
    let mut marks = vec![false; graph.num_items()];
    compatible_within(graph, user, behavior, rank, &all, &mut marks)
}

/// [`compatible_negatives`] restricted to `candidates`; `marks` is scratch
/// space of length `num_items`, all false on entry and exit.
fn compatible_within(
    graph: &MultiBehaviorGraph,
    user: usize,
    behavior: BehaviorId,
    rank: &PriorityRank,
    candidates: &[usize],
    marks: &mut [bool],
) -> Vec<usize> {
    let excluded = std::iter::once(behavior)
        .chain(rank.higher(behavior).iter().copied())
        .flat_map(|b| graph.neighbors(user, Side::User, Some(b)).iter().copied());
    let excluded: Vec<usize> = excluded.collect();
    for &i in &excluded {
        marks[i] = true;
    }
    let out = candidates.iter().copied().filter(|&i| !marks[i]).collect();
    for &i in &excluded {
        marks[i] = false;
    }
    out
}

fn negatives_per_behavior(per_behavior: &[usize], num_behaviors: usize) -> Result<Vec<usize>> {
    let n: Vec<usize> = match per_behavior.len() {
        1 => vec![per_behavior[0]; num_behaviors],
        k if k == num_behaviors => per_behavior.to_vec(),
        k => {
            return Err(Error::Config(format!(
                "negatives per behavior has {k} entries for {num_behaviors} behaviors"
            )))
        }
    };
    if n.contains(&0) {
        return Err(Error::Config("negatives per positive must be at least 1".into()));
    }
    Ok(n)
}

/// Core sampler. Positives come from `positives`, hierarchy exclusions from
/// `context`, and negatives are drawn uniformly with replacement from
/// `candidates` (ascending item ids).
pub(crate) fn sample_triples_with(
    context: &MultiBehaviorGraph,
    positives: &MultiBehaviorGraph,
    candidates: &[usize],
    rank: &PriorityRank,
    per_behavior: &[usize],
    seed: u64,
) -> Result<TripleSample> {
    let n_b = negatives_per_behavior(per_behavior, context.num_behaviors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut marks = vec![false; context.num_items()];
    let mut sample = TripleSample::default();
    for user in 0..positives.num_users() {
        for b in positives.behavior_ids() {
            let pos = positives.neighbors(user, Side::User, Some(b));
            if pos.is_empty() {
                continue;
            }
            let negs = compatible_within(context, user, b, rank, candidates, &mut marks);
            if negs.is_empty() {
                sample.skipped.push((user, b));
                continue;
            }
            for &i in pos {
                for _ in 0..n_b[b.0] {
                    let j = negs[rng.random_range(0..negs.len())];
                    sample.triples.push(HbprTriple {
                        user,
                        behavior: b,
                        pos: i,
                        neg: j,
                    });
                }
            }
        }
    }
    Ok(sample)
}

/// Optional pool restriction for [`sample_hbpr_triples`].
#[derive(Debug, Clone, Copy)]
pub struct Restriction<'a> {
    /// Graph whose edges are the only admissible positives.
    pub positives: &'a MultiBehaviorGraph,
    /// Admissible negative items, ascending.
    pub negative_items: &'a [usize],
}

/// Emits `per_behavior[b]` triples for every positive `(u, b, i)`, with the
/// negative drawn uniformly from the compatible set. `per_behavior` holds
/// either one value for all behaviors or one per behavior.
pub fn sample_hbpr_triples(
    graph: &MultiBehaviorGraph,
    rank: &PriorityRank,
    per_behavior: &[usize],
    seed: u64,
    restrict: Option<Restriction<'_>>,
) -> Result<TripleSample> {
    match restrict {
        Some(r) => sample_triples_with(graph, r.positives, r.negative_items, rank, per_behavior, seed),
        None => {
            let all: Vec<usize> = (0..graph.num_items()).collect();
            sample_triples_with(graph, graph, &all, rank, per_behavior, seed)
        }
    }
}

/// True when no negative of `triple` is positive under its own behavior or
/// any behavior that outranks it, and the positive is a real edge.
pub fn is_hierarchy_compliant(graph: &MultiBehaviorGraph, rank: &PriorityRank, triple: &HbprTriple) -> bool {
    graph.has_edge(triple.user, triple.behavior, triple.pos)
        && !std::iter::once(triple.behavior)
            .chain(rank.higher(triple.behavior).iter().copied())
            .any(|b| graph.has_edge(triple.user, b, triple.neg))
}

#[derive(Serialize)]
struct TripleRow<'a> {
    user: usize,
    behavior: &'a str,
    pos_item: usize,
    neg_item: usize,
}

/// Audit dump: `user,behavior,pos_item,neg_item`.
pub fn write_triples(path: impl AsRef<Path>, triples: &[HbprTriple], behaviors: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for t in triples {
        w.serialize(TripleRow {
            user: t.user,
            behavior: &behaviors[t.behavior.0],
            pos_item: t.pos,
            neg_item: t.neg,
        })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

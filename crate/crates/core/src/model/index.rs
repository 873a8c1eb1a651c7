use std::sync::Arc;

use super::temporal::{temporal_encoding, TimestampNumbering};
use crate::error::{Error, Result};
use crate::graph::{MultiBehaviorGraph, Side};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Edge list of one behavior, flattened for batched attention.
#[derive(Debug, Clone)]
pub(crate) struct BehaviorEdges<T> {
    pub users: Arc<[usize]>,
    pub items: Arc<[usize]>,
    /// Temporal encoding of every edge, `[edges, d]`.
    pub encoding: Option<Tensor<T>>,
}

/// Graph structure precomputed for the propagation layers: per-behavior
/// edge lists, the connected (user, item) pairs of the union graph, and
/// optional per-edge temporal encodings.
#[derive(Debug, Clone)]
pub struct PropagationIndex<T> {
    pub(crate) num_users: usize,
    pub(crate) num_items: usize,
    pub(crate) dim: usize,
    pub(crate) behaviors: Vec<BehaviorEdges<T>>,
    pub(crate) pair_users: Arc<[usize]>,
    pub(crate) pair_items: Arc<[usize]>,
    /// Pair ids of all behavior edges, concatenated in behavior order.
    pub(crate) record_pairs: Arc<[usize]>,
}

impl<T: Scalar> PropagationIndex<T> {
    /// `numbering` enables temporal encoding; every edge then needs a
    /// timestamp.
    pub fn new(graph: &MultiBehaviorGraph, dim: usize, numbering: Option<&TimestampNumbering>) -> Result<Self> {
        let mut pair_offset = vec![0usize; graph.num_users() + 1];
        for u in 0..graph.num_users() {
            pair_offset[u + 1] = pair_offset[u] + graph.neighbors(u, Side::User, None).len();
        }
        let (pair_users, pair_items): (Vec<usize>, Vec<usize>) = graph.union_pairs().unzip();

        let mut behaviors = Vec::with_capacity(graph.num_behaviors());
        let mut record_pairs = Vec::with_capacity(graph.total_edges());
        for b in graph.behavior_ids() {
            let mut users = Vec::with_capacity(graph.num_edges(b));
            let mut items = Vec::with_capacity(graph.num_edges(b));
            let mut enc = Vec::new();
            for x in graph.edges(b) {
                let pos = graph
                    .neighbors(x.user, Side::User, None)
                    .binary_search(&x.item)
                    .expect("union contains every behavior edge");
                users.push(x.user);
                items.push(x.item);
                record_pairs.push(pair_offset[x.user] + pos);
                if let Some(numbering) = numbering {
                    let t = x.timestamp.ok_or(Error::MissingTimestamp {
                        user: x.user,
                        item: x.item,
                    })?;
                    enc.extend(temporal_encoding::<T>(numbering.rank(t) as f64, dim)?);
                }
            }
            let encoding = match numbering {
                Some(_) => Some(Tensor::new(vec![users.len(), dim], enc)?),
                None => None,
            };
            behaviors.push(BehaviorEdges {
                users: users.into(),
                items: items.into(),
                encoding,
            });
        }

        Ok(Self {
            num_users: graph.num_users(),
            num_items: graph.num_items(),
            dim,
            behaviors,
            pair_users: pair_users.into(),
            pair_items: pair_items.into(),
            record_pairs: record_pairs.into(),
        })
    }

    /// Builds the index a model with `config` propagates over; temporal
    /// ranks are numbered from `graph`'s own timestamps.
    pub fn for_config(graph: &MultiBehaviorGraph, config: &super::ModelConfig) -> Result<Self> {
        if config.use_temporal {
            let numbering = TimestampNumbering::from_graph(graph);
            Self::new(graph, config.dim, Some(&numbering))
        } else {
            Self::new(graph, config.dim, None)
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_pairs(&self) -> usize {
        self.pair_users.len()
    }

    pub fn is_temporal(&self) -> bool {
        self.behaviors.iter().any(|b| b.encoding.is_some())
    }

    /// Per-edge target segment ids for one behavior.
    pub fn edge_users(&self, behavior: usize) -> &[usize] {
        &self.behaviors[behavior].users
    }

    pub fn edge_items(&self, behavior: usize) -> &[usize] {
        &self.behaviors[behavior].items
    }

    pub fn pair_users(&self) -> &[usize] {
        &self.pair_users
    }

    pub fn pair_items(&self) -> &[usize] {
        &self.pair_items
    }

    pub fn record_pairs(&self) -> &[usize] {
        &self.record_pairs
    }
}

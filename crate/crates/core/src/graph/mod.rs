//! User-item multi-behavior bipartite graph.
//!
//! Every behavior keeps its own pair of sorted adjacency lists (user → items
//! and item → users) plus the aligned interaction timestamps. Union
//! neighborhoods are materialized once at construction.

mod ingest;
mod split;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{load_interactions, CsvSchema, IdMap, LoadedInteractions};
pub use split::{temporal_split, SplitParts, TemporalSplit};
pub use store::{read_graph, write_graph, GraphMeta, StoredGraph};

/// Index of a behavior type in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BehaviorId(pub usize);

impl BehaviorId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub behavior: BehaviorId,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: usize, item: usize, behavior: usize, timestamp: Option<i64>) -> Self {
        Self {
            user,
            item,
            behavior: BehaviorId(behavior),
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

/// Collapses repeated (user, item, behavior) events into one edge carrying
/// the earliest timestamp. Output is sorted by (user, item, behavior).
pub fn dedup_interactions(mut interactions: Vec<Interaction>) -> Vec<Interaction> {
    interactions.sort_by_key(|x| (x.user, x.item, x.behavior));
    let mut out: Vec<Interaction> = Vec::with_capacity(interactions.len());
    for x in interactions {
        match out.last_mut() {
            Some(last)
                if last.user == x.user && last.item == x.item && last.behavior == x.behavior =>
            {
                last.timestamp = match (last.timestamp, x.timestamp) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            _ => out.push(x),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    timestamps: Vec<Option<i64>>,
}

impl Adjacency {
    /// `pairs` must be sorted by (source, target) and duplicate-free.
    fn from_sorted(num_sources: usize, pairs: &[(usize, usize, Option<i64>)]) -> Self {
        let mut offsets = vec![0; num_sources + 1];
        for &(s, _, _) in pairs {
            offsets[s + 1] += 1;
        }
        for k in 0..num_sources {
            offsets[k + 1] += offsets[k];
        }
        Self {
            offsets,
            targets: pairs.iter().map(|p| p.1).collect(),
            timestamps: pairs.iter().map(|p| p.2).collect(),
        }
    }

    fn range(&self, node: usize) -> std::ops::Range<usize> {
        self.offsets[node]..self.offsets[node + 1]
    }

    fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.range(node)]
    }

    fn timestamps(&self, node: usize) -> &[Option<i64>] {
        &self.timestamps[self.range(node)]
    }
}

/// Immutable multi-behavior bipartite graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBehaviorGraph {
    num_users: usize,
    num_items: usize,
    behaviors: Vec<String>,
    user_adj: Vec<Adjacency>,
    item_adj: Vec<Adjacency>,
    user_union: Adjacency,
    item_union: Adjacency,
}

impl MultiBehaviorGraph {
    /// Builds the graph, deduplicating repeated edges (earliest timestamp wins).
    pub fn build(
        interactions: &[Interaction],
        num_users: usize,
        num_items: usize,
        behaviors: Vec<String>,
    ) -> Result<Self> {
        if behaviors.is_empty() {
            return Err(Error::Config("behavior vocabulary is empty".into()));
        }
        let nb = behaviors.len();
        for x in interactions {
            check_index("user", x.user, num_users)?;
            check_index("item", x.item, num_items)?;
            check_index("behavior", x.behavior.0, nb)?;
        }
        let edges = dedup_interactions(interactions.to_vec());

        let mut per_user: Vec<Vec<(usize, usize, Option<i64>)>> = vec![Vec::new(); nb];
        let mut per_item: Vec<Vec<(usize, usize, Option<i64>)>> = vec![Vec::new(); nb];
        let mut union_pairs = Vec::with_capacity(edges.len());
        for x in &edges {
            per_user[x.behavior.0].push((x.user, x.item, x.timestamp));
            per_item[x.behavior.0].push((x.item, x.user, x.timestamp));
            union_pairs.push((x.user, x.item, None));
        }
        let user_adj = per_user
            .iter_mut()
            .map(|p| {
                p.sort_unstable_by_key(|e| (e.0, e.1));
                Adjacency::from_sorted(num_users, p)
            })
            .collect();
        let item_adj = per_item
            .iter_mut()
            .map(|p| {
                p.sort_unstable_by_key(|e| (e.0, e.1));
                Adjacency::from_sorted(num_items, p)
            })
            .collect();

        union_pairs.dedup_by_key(|e| (e.0, e.1));
        let user_union = Adjacency::from_sorted(num_users, &union_pairs);
        let mut flipped: Vec<_> = union_pairs.iter().map(|e| (e.1, e.0, None)).collect();
        flipped.sort_unstable_by_key(|e| (e.0, e.1));
        let item_union = Adjacency::from_sorted(num_items, &flipped);

        Ok(Self {
            num_users,
            num_items,
            behaviors,
            user_adj,
            item_adj,
            user_union,
            item_union,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_behaviors(&self) -> usize {
        self.behaviors.len()
    }

    pub fn behaviors(&self) -> &[String] {
        &self.behaviors
    }

    pub fn behavior_ids(&self) -> impl Iterator<Item = BehaviorId> {
        (0..self.behaviors.len()).map(BehaviorId)
    }

    pub fn behavior_id(&self, name: &str) -> Option<BehaviorId> {
        self.behaviors.iter().position(|b| b == name).map(BehaviorId)
    }

    pub fn num_nodes(&self, side: Side) -> usize {
        match side {
            Side::User => self.num_users,
            Side::Item => self.num_items,
        }
    }

    fn adjacency(&self, side: Side, behavior: Option<BehaviorId>) -> &Adjacency {
        match (side, behavior) {
            (Side::User, Some(b)) => &self.user_adj[b.0],
            (Side::Item, Some(b)) => &self.item_adj[b.0],
            (Side::User, None) => &self.user_union,
            (Side::Item, None) => &self.item_union,
        }
    }

    /// N^{(b)} of `node` when `behavior` is given, otherwise the union N.
    /// Sorted ascending; empty for isolated nodes.
    ///
    /// Panics if `node` or `behavior` is out of range.
    pub fn neighbors(&self, node: usize, side: Side, behavior: Option<BehaviorId>) -> &[usize] {
        self.adjacency(side, behavior).neighbors(node)
    }

    /// Timestamps aligned with [`neighbors`](Self::neighbors) for one behavior.
    pub fn neighbor_timestamps(&self, node: usize, side: Side, behavior: BehaviorId) -> &[Option<i64>] {
        self.adjacency(side, Some(behavior)).timestamps(node)
    }

    pub fn has_edge(&self, user: usize, behavior: BehaviorId, item: usize) -> bool {
        self.user_adj[behavior.0]
            .neighbors(user)
            .binary_search(&item)
            .is_ok()
    }

    pub fn timestamp(&self, user: usize, behavior: BehaviorId, item: usize) -> Option<i64> {
        let adj = &self.user_adj[behavior.0];
        adj.neighbors(user)
            .binary_search(&item)
            .ok()
            .and_then(|k| adj.timestamps(user)[k])
    }

    pub fn num_edges(&self, behavior: BehaviorId) -> usize {
        self.user_adj[behavior.0].targets.len()
    }

    pub fn total_edges(&self) -> usize {
        self.user_adj.iter().map(|a| a.targets.len()).sum()
    }

    /// Edges of one behavior in (user, item) order.
    pub fn edges(&self, behavior: BehaviorId) -> impl Iterator<Item = Interaction> + '_ {
        let adj = &self.user_adj[behavior.0];
        (0..self.num_users).flat_map(move |u| {
            adj.range(u).map(move |k| Interaction {
                user: u,
                item: adj.targets[k],
                behavior,
                timestamp: adj.timestamps[k],
            })
        })
    }

    /// All edges, behavior-major.
    pub fn interactions(&self) -> Vec<Interaction> {
        self.behavior_ids().flat_map(|b| self.edges(b)).collect()
    }

    /// Connected (user, item) pairs of the union graph in (user, item) order.
    pub fn union_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_users)
            .flat_map(move |u| self.user_union.neighbors(u).iter().map(move |&i| (u, i)))
    }

    pub fn num_union_pairs(&self) -> usize {
        self.user_union.targets.len()
    }

    /// Same node sets and vocabulary, restricted to the given edges.
    pub fn with_edges(&self, interactions: &[Interaction]) -> Result<Self> {
        Self::build(interactions, self.num_users, self.num_items, self.behaviors.clone())
    }
}

fn check_index(kind: &'static str, index: usize, count: usize) -> Result<()> {
    if index >= count {
        return Err(Error::IndexOutOfRange { kind, index, count });
    }
    Ok(())
}

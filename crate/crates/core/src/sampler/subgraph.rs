use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_triples_with, PriorityRank, TripleSample};
use crate::error::{Error, Result};
use crate::graph::{read_graph, write_graph, BehaviorId, Interaction, MultiBehaviorGraph, Side};

pub const KERNEL_FILE: &str = "kernel.json";

/// A sampled multi-behavior sub-graph. Node ids stay global; `graph` holds
/// only the retained edges and `kernel` the kernel edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGraph {
    /// Retained users, ascending.
    pub users: Vec<usize>,
    /// Retained items, ascending.
    pub items: Vec<usize>,
    pub graph: MultiBehaviorGraph,
    pub kernel_users: Vec<usize>,
    /// Union over behaviors of the kernel users' one-hop items, ascending.
    pub kernel_items: Vec<usize>,
    pub kernel: MultiBehaviorGraph,
}

impl SubGraph {
    pub fn num_nodes(&self) -> usize {
        self.users.len() + self.items.len()
    }

    pub fn contains_user(&self, u: usize) -> bool {
        self.users.binary_search(&u).is_ok()
    }

    pub fn contains_item(&self, i: usize) -> bool {
        self.items.binary_search(&i).is_ok()
    }
}

fn side_of(hop: usize) -> Side {
    // hop 0 holds users, hop 1 items, ...
    if hop % 2 == 0 {
        Side::User
    } else {
        Side::Item
    }
}

/// Per behavior: the kernel items are all one-hop neighbors of the kernel
/// users; each further hop keeps at most `fanout[b]` uniformly chosen
/// neighbors per frontier node. The node sets of all behaviors are united
/// and every edge of the full graph between retained nodes is kept.
pub fn sample_subgraph(
    graph: &MultiBehaviorGraph,
    kernel_users: &[usize],
    hops: usize,
    fanout: &[usize],
    seed: u64,
) -> Result<SubGraph> {
    if kernel_users.is_empty() {
        return Err(Error::Config("kernel user set is empty".into()));
    }
    if hops == 0 {
        return Err(Error::Config("sub-graph sampling needs at least one hop".into()));
    }
    let nb = graph.num_behaviors();
    let fanout: Vec<usize> = match fanout.len() {
        1 => vec![fanout[0]; nb],
        k if k == nb => fanout.to_vec(),
        k => return Err(Error::Config(format!("{k} fanouts for {nb} behaviors"))),
    };
    if fanout.contains(&0) {
        return Err(Error::Config("fanout must be at least 1".into()));
    }
    for &u in kernel_users {
        if u >= graph.num_users() {
            return Err(Error::IndexOutOfRange {
                kind: "kernel user",
                index: u,
                count: graph.num_users(),
            });
        }
    }
    let mut kernel_users = kernel_users.to_vec();
    kernel_users.sort_unstable();
    kernel_users.dedup();

    let mut keep_user = vec![false; graph.num_users()];
    let mut keep_item = vec![false; graph.num_items()];
    let mut kernel_item = vec![false; graph.num_items()];

    for b in graph.behavior_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b.0 as u64));
        let mut seen_user = vec![false; graph.num_users()];
        let mut seen_item = vec![false; graph.num_items()];
        for &u in &kernel_users {
            seen_user[u] = true;
        }
        let mut frontier = kernel_users.clone();
        for hop in 0..hops {
            let from = side_of(hop);
            let mut next = Vec::new();
            for &node in &frontier {
                let nbrs = graph.neighbors(node, from, Some(b));
                let picked: Vec<usize> = if hop == 0 || nbrs.len() <= fanout[b.0] {
                    nbrs.to_vec()
                } else {
                    let mut idx = sample_indices(&mut rng, nbrs.len(), fanout[b.0]).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|k| nbrs[k]).collect()
                };
                let seen = match from {
                    Side::User => &mut seen_item,
                    Side::Item => &mut seen_user,
                };
                for n in picked {
                    if !seen[n] {
                        seen[n] = true;
                        next.push(n);
                    }
                }
            }
            if hop == 0 {
                for &i in &next {
                    kernel_item[i] = true;
                }
            }
            next.sort_unstable();
            frontier = next;
        }
        for (k, s) in seen_user.iter().enumerate() {
            keep_user[k] |= *s;
        }
        for (k, s) in seen_item.iter().enumerate() {
            keep_item[k] |= *s;
        }
    }

    let mut kernel_user_mask = vec![false; graph.num_users()];
    for &u in &kernel_users {
        kernel_user_mask[u] = true;
    }
    let mut retained: Vec<Interaction> = Vec::new();
    let mut kernel_edges: Vec<Interaction> = Vec::new();
    for b in graph.behavior_ids() {
        for x in graph.edges(b) {
            if keep_user[x.user] && keep_item[x.item] {
                retained.push(x);
            }
            if kernel_user_mask[x.user] && kernel_item[x.item] {
                kernel_edges.push(x);
            }
        }
    }

    let collect = |mask: &[bool]| -> Vec<usize> { (0..mask.len()).filter(|&k| mask[k]).collect() };
    Ok(SubGraph {
        users: collect(&keep_user),
        items: collect(&keep_item),
        graph: graph.with_edges(&retained)?,
        kernel_users,
        kernel_items: collect(&kernel_item),
        kernel: graph.with_edges(&kernel_edges)?,
    })
}

/// Positives from the kernel edges, negatives from the sub-graph's items,
/// hierarchy exclusions from the sub-graph's own edges.
pub fn subgraph_hbpr_training_set(
    subgraph: &SubGraph,
    rank: &PriorityRank,
    per_behavior: &[usize],
    seed: u64,
) -> Result<TripleSample> {
    sample_triples_with(&subgraph.graph, &subgraph.kernel, &subgraph.items, rank, per_behavior, seed)
}

/// Kernel manifest stored next to a persisted sub-graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub kernel_users: Vec<usize>,
    pub kernel_items: Vec<usize>,
    pub kernel_edge_count: usize,
    pub retained_users: Vec<usize>,
    pub retained_items: Vec<usize>,
}

/// Writes the retained edges in the graph-directory format plus
/// `kernel.json`.
pub fn write_subgraph(dir: impl AsRef<Path>, subgraph: &SubGraph) -> Result<()> {
    let dir = dir.as_ref();
    write_graph(dir, &subgraph.graph, None)?;
    let manifest = KernelManifest {
        kernel_users: subgraph.kernel_users.clone(),
        kernel_items: subgraph.kernel_items.clone(),
        kernel_edge_count: subgraph.kernel.total_edges(),
        retained_users: subgraph.users.clone(),
        retained_items: subgraph.items.clone(),
    };
    let path = dir.join(KERNEL_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_subgraph(dir: impl AsRef<Path>) -> Result<SubGraph> {
    let dir = dir.as_ref();
    let graph = read_graph(dir)?.graph;
    let path = dir.join(KERNEL_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: KernelManifest = serde_json::from_str(&text)?;
    let kernel_edges: Vec<Interaction> = m
        .kernel_users
        .iter()
        .flat_map(|&u| {
            let g = &graph;
            let items = &m.kernel_items;
            g.behavior_ids().flat_map(move |b: BehaviorId| {
                g.neighbors(u, Side::User, Some(b))
                    .iter()
                    .filter(|i| items.binary_search(i).is_ok())
                    .map(move |&i| Interaction {
                        user: u,
                        item: i,
                        behavior: b,
                        timestamp: g.timestamp(u, b, i),
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    let kernel = graph.with_edges(&kernel_edges)?;
    if kernel.total_edges() != m.kernel_edge_count {
        return Err(Error::Config(format!(
            "kernel manifest lists {} edges, sub-graph yields {}",
            m.kernel_edge_count,
            kernel.total_edges()
        )));
    }
    Ok(SubGraph {
        users: m.retained_users,
        items: m.retained_items,
        graph,
        kernel_users: m.kernel_users,
        kernel_items: m.kernel_items,
        kernel,
    })
}

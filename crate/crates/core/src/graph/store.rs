use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BehaviorId, IdMap, Interaction, MultiBehaviorGraph};
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const EDGES_FILE: &str = "edges.csv";
pub const USERS_FILE: &str = "users.csv";
pub const ITEMS_FILE: &str = "items.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_users: usize,
    pub num_items: usize,
    pub behaviors: Vec<String>,
    pub edge_counts: Vec<usize>,
}

/// A graph directory as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredGraph {
    pub graph: MultiBehaviorGraph,
    /// External id maps, present when the graph came from ingestion.
    pub users: Option<IdMap>,
    pub items: Option<IdMap>,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    user: usize,
    item: usize,
    behavior: usize,
    timestamp: Option<i64>,
}

#[derive(Serialize, Deserialize)]
struct IdRow {
    index: usize,
    external_id: String,
}

/// Writes `meta.json`, `edges.csv` and, when given, the id maps.
pub fn write_graph(dir: impl AsRef<Path>, graph: &MultiBehaviorGraph, ids: Option<(&IdMap, &IdMap)>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = GraphMeta {
        num_users: graph.num_users(),
        num_items: graph.num_items(),
        behaviors: graph.behaviors().to_vec(),
        edge_counts: graph.behavior_ids().map(|b| graph.num_edges(b)).collect(),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;

    let mut w = csv::Writer::from_path(dir.join(EDGES_FILE))?;
    for x in graph.interactions() {
        w.serialize(EdgeRow {
            user: x.user,
            item: x.item,
            behavior: x.behavior.0,
            timestamp: x.timestamp,
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join(EDGES_FILE), e))?;

    if let Some((users, items)) = ids {
        for (name, map) in [(USERS_FILE, users), (ITEMS_FILE, items)] {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            for (index, id) in map.ids().iter().enumerate() {
                w.serialize(IdRow {
                    index,
                    external_id: id.clone(),
                })?;
            }
            w.flush().map_err(|e| Error::io(dir.join(name), e))?;
        }
    }
    Ok(())
}

fn read_ids(path: &Path) -> Result<Option<IdMap>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut ids = Vec::new();
    for (k, row) in r.deserialize::<IdRow>().enumerate() {
        let row = row?;
        if row.index != k {
            return Err(Error::MalformedRow {
                line: k as u64 + 2,
                message: format!("id map index {} out of sequence", row.index),
            });
        }
        ids.push(row.external_id);
    }
    Ok(Some(IdMap::from_ids(ids)))
}

pub fn read_graph(dir: impl AsRef<Path>) -> Result<StoredGraph> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: GraphMeta = serde_json::from_str(&text)?;

    let mut r = csv::Reader::from_path(dir.join(EDGES_FILE))?;
    let mut edges = Vec::new();
    for row in r.deserialize::<EdgeRow>() {
        let row = row?;
        edges.push(Interaction {
            user: row.user,
            item: row.item,
            behavior: BehaviorId(row.behavior),
            timestamp: row.timestamp,
        });
    }
    let graph = MultiBehaviorGraph::build(&edges, meta.num_users, meta.num_items, meta.behaviors)?;
    Ok(StoredGraph {
        graph,
        users: read_ids(&dir.join(USERS_FILE))?,
        items: read_ids(&dir.join(ITEMS_FILE))?,
    })
}

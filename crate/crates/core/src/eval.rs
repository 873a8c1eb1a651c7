//! Full-ranking Recall@K and NDCG@K per behavior.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BehaviorId, MultiBehaviorGraph, Side};
use crate::model::{forward_values, score_all_items, LayerOutput, ModelConfig, ModelParams, PropagationIndex};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub ks: Vec<usize>,
    /// Behaviors to evaluate; empty means every behavior of the graph.
    pub behaviors: Vec<String>,
    /// Drop the user's training positives of the evaluated behavior from
    /// the candidate list.
    pub exclude_train: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            ks: vec![10, 50, 100],
            behaviors: Vec::new(),
            exclude_train: true,
        }
    }
}

impl EvalSpec {
    pub fn validate(&self, vocabulary: &[String]) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("every cutoff K must be at least 1".into()));
        }
        for b in &self.behaviors {
            if !vocabulary.contains(b) {
                return Err(Error::Unknown {
                    kind: "behavior",
                    name: b.clone(),
                });
            }
        }
        Ok(())
    }

    fn behavior_ids(&self, graph: &MultiBehaviorGraph) -> Result<Vec<BehaviorId>> {
        if self.behaviors.is_empty() {
            return Ok(graph.behavior_ids().collect());
        }
        self.behaviors
            .iter()
            .map(|name| {
                graph.behavior_id(name).ok_or_else(|| Error::Unknown {
                    kind: "behavior",
                    name: name.clone(),
                })
            })
            .collect()
    }
}

/// Items sorted by descending score, ties by ascending index, with
/// `exclusions` removed first. Position `k` holds the item of rank `k + 1`.
pub fn rank_scores<T: Scalar>(scores: &[T], exclusions: &[usize]) -> Vec<usize> {
    let mut excluded = vec![false; scores.len()];
    for &i in exclusions {
        if i < scores.len() {
            excluded[i] = true;
        }
    }
    let mut items: Vec<usize> = (0..scores.len()).filter(|&i| !excluded[i]).collect();
    items.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    items
}

pub fn rank_items<T: Scalar>(
    user: usize,
    behavior: BehaviorId,
    output: &LayerOutput<T>,
    params: &ModelParams<T>,
    alpha: T,
    exclusions: &[usize],
) -> Vec<usize> {
    rank_scores(&score_all_items(user, behavior, output, params, alpha), exclusions)
}

fn hits<'a>(ranked: &'a [usize], positives: &[usize], k: usize) -> impl Iterator<Item = usize> + 'a {
    let mut is_pos = std::collections::HashSet::with_capacity(positives.len());
    is_pos.extend(positives.iter().copied());
    ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, i)| is_pos.contains(i))
        .map(|(r, _)| r + 1)
}

/// `None` when the user has no test positives.
pub fn recall_at_k(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let n = hits(ranked, positives, k).count();
    Some(n as f64 / k.min(positives.len()) as f64)
}

/// Base-2 DCG normalized by the ideal DCG of `min(K, |positives|)` hits.
pub fn ndcg_at_k(ranked: &[usize], positives: &[usize], k: usize) -> Option<f64> {
    if positives.is_empty() {
        return None;
    }
    let gain = |r: usize| 1.0 / ((r + 1) as f64).log2();
    let dcg: f64 = hits(ranked, positives, k).map(gain).sum();
    let ideal: f64 = (1..=k.min(positives.len())).map(gain).sum();
    Some(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub behavior: String,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, behavior: &str, k: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.behavior == behavior && r.k == k)
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().all(|r| r.recall.is_finite() && r.ndcg.is_finite())
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Flat layout: `behavior,K,metric,value,n_users`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        w.write_record(["behavior", "K", "metric", "value", "n_users"])?;
        for r in &self.rows {
            for (metric, value) in [("recall", r.recall), ("ndcg", r.ndcg)] {
                w.write_record([
                    r.behavior.clone(),
                    r.k.to_string(),
                    metric.to_string(),
                    value.to_string(),
                    r.n_users.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Metrics from an already computed final representation. `train`
/// supplies the exclusions, `test` the positives.
pub fn evaluate_output<T: Scalar>(
    train: &MultiBehaviorGraph,
    test: &MultiBehaviorGraph,
    output: &LayerOutput<T>,
    params: &ModelParams<T>,
    alpha: f64,
    spec: &EvalSpec,
) -> Result<MetricsTable> {
    spec.validate(test.behaviors())?;
    let alpha = T::of(alpha);
    let mut table = MetricsTable::default();
    for b in spec.behavior_ids(test)? {
        let mut recall = vec![0.0; spec.ks.len()];
        let mut ndcg = vec![0.0; spec.ks.len()];
        let mut n_users = 0;
        for u in 0..test.num_users() {
            let positives = test.neighbors(u, Side::User, Some(b));
            if positives.is_empty() {
                continue;
            }
            let exclusions: &[usize] = if spec.exclude_train && u < train.num_users() {
                train.neighbors(u, Side::User, Some(b))
            } else {
                &[]
            };
            let ranked = rank_items(u, b, output, params, alpha, exclusions);
            n_users += 1;
            for (slot, &k) in spec.ks.iter().enumerate() {
                recall[slot] += recall_at_k(&ranked, positives, k).expect("nonempty positives");
                ndcg[slot] += ndcg_at_k(&ranked, positives, k).expect("nonempty positives");
            }
        }
        let denom = n_users.max(1) as f64;
        for (slot, &k) in spec.ks.iter().enumerate() {
            table.rows.push(MetricRow {
                behavior: test.behaviors()[b.0].clone(),
                k,
                recall: recall[slot] / denom,
                ndcg: ndcg[slot] / denom,
                n_users,
            });
        }
    }
    Ok(table)
}

/// Propagates over the training graph and ranks every item for each user
/// with test positives.
pub fn evaluate<T: Scalar>(
    train: &MultiBehaviorGraph,
    test: &MultiBehaviorGraph,
    config: &ModelConfig,
    params: &ModelParams<T>,
    spec: &EvalSpec,
) -> Result<MetricsTable> {
    let index = PropagationIndex::for_config(train, config)?;
    let output = forward_values(&index, config, params)?;
    evaluate_output(train, test, &output, params, config.alpha, spec)
}

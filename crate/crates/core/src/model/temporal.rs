use crate::error::{Error, Result};
use crate::graph::MultiBehaviorGraph;
use crate::scalar::Scalar;

/// Sinusoidal encoding of a numerated timestamp:
/// `PE[2e] = sin(t / 10000^(2e/d))`, `PE[2e+1] = cos(t / 10000^((2e+1)/d))`.
///
/// The cosine exponent uses `2e + 1`, not the `2e` of the transformer
/// convention.
pub fn temporal_encoding<T: Scalar>(t: f64, d: usize) -> Result<Vec<T>> {
    if d % 2 != 0 {
        return Err(Error::Config(format!("temporal encoding needs an even dim, got {d}")));
    }
    let mut pe = Vec::with_capacity(d);
    for e in 0..d / 2 {
        let even = 10000f64.powf((2 * e) as f64 / d as f64);
        let odd = 10000f64.powf((2 * e + 1) as f64 / d as f64);
        pe.push(T::of((t / even).sin()));
        pe.push(T::of((t / odd).cos()));
    }
    Ok(pe)
}

/// Maps raw timestamps to the 0-based rank among distinct timestamps of a
/// reference (training) graph.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TimestampNumbering {
    distinct: Vec<i64>,
}

impl TimestampNumbering {
    pub fn from_graph(graph: &MultiBehaviorGraph) -> Self {
        let mut distinct: Vec<i64> = graph
            .behavior_ids()
            .flat_map(|b| graph.edges(b).filter_map(|x| x.timestamp))
            .collect();
        distinct.sort_unstable();
        distinct.dedup();
        Self { distinct }
    }

    /// Unseen timestamps take the rank of the first larger known value.
    pub fn rank(&self, t: i64) -> usize {
        self.distinct.partition_point(|&x| x < t)
    }

    pub fn len(&self) -> usize {
        self.distinct.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distinct.is_empty()
    }
}

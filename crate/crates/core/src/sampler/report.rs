use serde::Serialize;

use crate::graph::MultiBehaviorGraph;

/// Edge count and share of each behavior; `deltas` holds the share
/// differences against a parent graph when one is given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BehaviorDistribution {
    pub behaviors: Vec<String>,
    pub counts: Vec<usize>,
    pub ratios: Vec<f64>,
    pub deltas: Option<Vec<f64>>,
}

fn shares(graph: &MultiBehaviorGraph) -> (Vec<usize>, Vec<f64>) {
    let counts: Vec<usize> = graph.behavior_ids().map(|b| graph.num_edges(b)).collect();
    let total = counts.iter().sum::<usize>().max(1) as f64;
    let ratios = counts.iter().map(|&c| c as f64 / total).collect();
    (counts, ratios)
}

pub fn behavior_distribution_report(
    graph: &MultiBehaviorGraph,
    parent: Option<&MultiBehaviorGraph>,
) -> BehaviorDistribution {
    let (counts, ratios) = shares(graph);
    let deltas = parent.map(|p| {
        let (_, full) = shares(p);
        ratios.iter().zip(full).map(|(a, b)| a - b).collect()
    });
    BehaviorDistribution {
        behaviors: graph.behaviors().to_vec(),
        counts,
        ratios,
        deltas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Interaction;

    #[test]
    fn ratios_and_deltas() {
        let vocab: Vec<String> = vec!["view".into(), "buy".into()];
        let full = MultiBehaviorGraph::build(
            &[
                Interaction::new(0, 0, 0, None),
                Interaction::new(0, 1, 0, None),
                Interaction::new(0, 1, 1, None),
                Interaction::new(1, 0, 1, None),
            ],
            2,
            2,
            vocab,
        )
        .unwrap();
        let sub = full.with_edges(&[Interaction::new(0, 0, 0, None)]).unwrap();
        let r = behavior_distribution_report(&sub, Some(&full));
        assert_eq!(r.counts, vec![1, 0]);
        assert_eq!(r.ratios, vec![1.0, 0.0]);
        assert_eq!(r.deltas, Some(vec![0.5, -0.5]));
    }
}

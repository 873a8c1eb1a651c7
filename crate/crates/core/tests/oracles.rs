mod common;

use common::checks::*;

#[test]
fn intra_layer_matches_naive_loops() {
    let e = intra_error(50, 100);
    assert!(e < 1e-10, "max error {e:e}");
}

#[test]
fn inter_layer_matches_naive_loops() {
    let e = inter_error(50, 200);
    assert!(e < 1e-10, "max error {e:e}");
}

#[test]
fn scores_match_coordinate_formula() {
    let e = score_error(50, 300);
    assert!(e < 1e-10, "max error {e:e}");
}

#[test]
fn kg_distances_match_naive_loops() {
    let e = kg_error(50, 400);
    assert!(e < 1e-10, "max error {e:e}");
}

#[test]
fn ranking_loss_matches_naive_sum() {
    let e = hbpr_error(50, 500);
    assert!(e < 1e-10, "max error {e:e}");
}

#[test]
fn attention_weights_are_distributions() {
    let e = attention_normalization_error(100, 600);
    assert!(e < 1e-10, "max deviation {e:e}");
}

#[test]
fn relabeling_nodes_permutes_the_output() {
    let e = permutation_error(100, 700);
    assert!(e < 1e-12, "max error {e:e}");
}

use std::sync::Arc;

use super::layers::{LayerOutput, LayerVars};
use super::params::ModelParams;
use crate::error::Result;
use crate::graph::BehaviorId;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// Preference of `user` for `item` under `behavior`:
/// `Σ_k e_u[k] · ((1-α)·diag_b[k] + α) · e_i[k]`.
pub fn score<T: Scalar>(
    user: usize,
    behavior: BehaviorId,
    item: usize,
    output: &LayerOutput<T>,
    params: &ModelParams<T>,
    alpha: T,
) -> T {
    let eu = output.users.row(user);
    let ei = output.items.row(item);
    let diag = params.behavior_diag.row(behavior.index());
    let keep = T::one() - alpha;
    eu.iter()
        .zip(ei)
        .zip(diag)
        .map(|((&a, &b), &w)| a * (keep * w + alpha) * b)
        .sum()
}

/// Scores of `user` for every item under `behavior`.
pub fn score_all_items<T: Scalar>(
    user: usize,
    behavior: BehaviorId,
    output: &LayerOutput<T>,
    params: &ModelParams<T>,
    alpha: T,
) -> Vec<T> {
    let keep = T::one() - alpha;
    let coef: Vec<T> = output
        .users
        .row(user)
        .iter()
        .zip(params.behavior_diag.row(behavior.index()))
        .map(|(&e, &w)| e * (keep * w + alpha))
        .collect();
    (0..output.items.rows())
        .map(|i| coef.iter().zip(output.items.row(i)).map(|(&c, &x)| c * x).sum())
        .collect()
}

/// Batched score on the tape; the three index slices are aligned.
pub fn score_batch<T: Scalar>(
    tape: &mut Tape<T>,
    output: LayerVars,
    behavior_diag: Var,
    users: Arc<[usize]>,
    behaviors: Arc<[usize]>,
    items: Arc<[usize]>,
    alpha: T,
) -> Result<Var> {
    let eu = tape.gather(output.users, users)?;
    let ei = tape.gather(output.items, items)?;
    let diag = tape.gather(behavior_diag, behaviors)?;
    let scaled = tape.scale(diag, T::one() - alpha);
    let coef = tape.add_scalar(scaled, alpha);
    let weighted = tape.mul(eu, coef)?;
    Ok(tape.row_dot(weighted, ei)?)
}

use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    forward, kg_score, kg_scores, score, score_batch, KgParamVars, KgParams, KgTriple, LayerOutput, ModelConfig,
    ModelParams, ParamVars, PropagationIndex,
};
use crate::sampler::HbprTriple;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// A knowledge-graph triple with its corrupted tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KgPair {
    pub triple: KgTriple,
    pub corrupt_tail: usize,
}

impl KgPair {
    pub fn corrupted(&self) -> KgTriple {
        KgTriple {
            tail: self.corrupt_tail,
            ..self.triple
        }
    }
}

fn softplus_neg(x: f64) -> f64 {
    // -log σ(x), stable on both tails
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `Σ −log σ(f(u,b,i) − f(u,b,j))` over the triples.
pub fn hbpr_loss<T: Scalar>(
    triples: &[HbprTriple],
    output: &LayerOutput<T>,
    params: &ModelParams<T>,
    alpha: T,
) -> Result<T> {
    if triples.is_empty() {
        return Err(Error::EmptyTriples("ranking loss".into()));
    }
    Ok(triples
        .iter()
        .map(|t| {
            let pos = score(t.user, t.behavior, t.pos, output, params, alpha);
            let neg = score(t.user, t.behavior, t.neg, output, params, alpha);
            T::of(softplus_neg((pos - neg).to_f64_lossless()))
        })
        .sum())
}

/// `Σ −log σ(g(h,r,t′) − g(h,r,t))`; the corrupted distance comes first.
pub fn kg_loss<T: Scalar>(pairs: &[KgPair], params: &ModelParams<T>, kg: &KgParams<T>) -> Result<T> {
    let mut total = T::zero();
    for p in pairs {
        let t = p.triple;
        let good = kg_score(t.head, t.relation, t.tail, params, kg)?;
        let bad = kg_score(t.head, t.relation, p.corrupt_tail, params, kg)?;
        total = total + T::of(softplus_neg((bad - good).to_f64_lossless()));
    }
    Ok(total)
}

/// Everything one optimizer step consumes.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub triples: &'a [HbprTriple],
    pub kg: &'a [KgPair],
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_reg: f64,
    pub kg_weight: f64,
}

/// Tape handles of the loss components. `total = hbpr + λ·reg + w·kg`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub hbpr: Var,
    pub reg: Var,
    pub kg: Option<Var>,
}

fn mean_neg_log_sigmoid<T: Scalar>(tape: &mut Tape<T>, high: Var, low: Var) -> Result<Var> {
    let diff = tape.sub(high, low)?;
    let ls = tape.log_sigmoid(diff);
    let m = tape.mean(ls);
    Ok(tape.scale(m, -T::one()))
}

fn rows_norm<T: Scalar>(tape: &mut Tape<T>, table: Var, rows: Vec<usize>) -> Result<Var> {
    let picked = tape.gather(table, rows.into())?;
    Ok(tape.l2_norm_sq(picked))
}

/// Mini-batch objective: mean ranking loss, squared norm of the embedding
/// rows the batch touches plus every transform, and the mean KG loss.
pub fn batch_objective<T: Scalar>(
    tape: &mut Tape<T>,
    index: &PropagationIndex<T>,
    config: &ModelConfig,
    vars: &ParamVars,
    kg_vars: Option<&KgParamVars>,
    batch: Batch<'_>,
    weights: LossWeights,
) -> Result<LossVars> {
    if batch.triples.is_empty() {
        return Err(Error::EmptyTriples("mini-batch".into()));
    }
    let output = forward(tape, index, config, vars)?;
    let alpha = T::of(config.alpha);
    let col = |f: fn(&HbprTriple) -> usize| -> Arc<[usize]> { batch.triples.iter().map(f).collect() };
    let users = col(|t| t.user);
    let behaviors = col(|t| t.behavior.0);
    let pos = score_batch(tape, output, vars.behavior_diag, users.clone(), behaviors.clone(), col(|t| t.pos), alpha)?;
    let neg = score_batch(tape, output, vars.behavior_diag, users, behaviors, col(|t| t.neg), alpha)?;
    let hbpr = mean_neg_log_sigmoid(tape, pos, neg)?;

    let touched_users: BTreeSet<usize> = batch.triples.iter().map(|t| t.user).collect();
    let mut touched_items: BTreeSet<usize> = batch.triples.iter().flat_map(|t| [t.pos, t.neg]).collect();
    let mut touched_entities = BTreeSet::new();
    let num_items = index.num_items();
    for p in batch.kg {
        for id in [p.triple.head, p.triple.tail, p.corrupt_tail] {
            if id < num_items {
                touched_items.insert(id);
            } else {
                touched_entities.insert(id - num_items);
            }
        }
    }

    let mut reg = rows_norm(tape, vars.user_emb, touched_users.into_iter().collect())?;
    let items = rows_norm(tape, vars.item_emb, touched_items.into_iter().collect())?;
    reg = tape.add(reg, items)?;
    for v in vars.transforms() {
        let n = tape.l2_norm_sq(v);
        reg = tape.add(reg, n)?;
    }

    let mut kg = None;
    if let Some(kv) = kg_vars {
        if !touched_entities.is_empty() {
            let n = rows_norm(tape, kv.entity_emb, touched_entities.into_iter().collect())?;
            reg = tape.add(reg, n)?;
        }
        for v in std::iter::once(kv.relation_emb).chain(kv.relation_proj.iter().copied()) {
            let n = tape.l2_norm_sq(v);
            reg = tape.add(reg, n)?;
        }
        if !batch.kg.is_empty() {
            let good: Vec<KgTriple> = batch.kg.iter().map(|p| p.triple).collect();
            let bad: Vec<KgTriple> = batch.kg.iter().map(KgPair::corrupted).collect();
            let g_good = kg_scores(tape, vars.item_emb, kv, &good)?;
            let g_bad = kg_scores(tape, vars.item_emb, kv, &bad)?;
            kg = Some(mean_neg_log_sigmoid(tape, g_bad, g_good)?);
        }
    }

    let weighted_reg = tape.scale(reg, T::of(weights.lambda_reg));
    let mut total = tape.add(hbpr, weighted_reg)?;
    if let Some(k) = kg {
        let weighted = tape.scale(k, T::of(weights.kg_weight));
        total = tape.add(total, weighted)?;
    }
    Ok(LossVars { total, hbpr, reg, kg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BehaviorId;
    use crate::tensor::Tensor;

    fn tiny() -> (LayerOutput<f64>, ModelParams<f64>) {
        let cfg = ModelConfig {
            dim: 2,
            num_layers: 1,
            behaviors: vec!["buy".into()],
            ..Default::default()
        };
        let params = ModelParams::init(&cfg, 1, 2, 3);
        let output = LayerOutput {
            users: Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            items: Tensor::matrix(2, 2, vec![0.5, 0.0, 0.5, 0.0]).unwrap(),
        };
        (output, params)
    }

    #[test]
    fn equal_scores_cost_ln_two() {
        let (output, params) = tiny();
        let t = HbprTriple {
            user: 0,
            behavior: BehaviorId(0),
            pos: 0,
            neg: 1,
        };
        let l = hbpr_loss(&[t], &output, &params, 0.5).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let (output, params) = tiny();
        assert!(hbpr_loss(&[], &output, &params, 0.5).is_err());
    }

    #[test]
    fn stable_softplus() {
        assert!(softplus_neg(800.0) < 1e-300);
        assert!((softplus_neg(-800.0) - 800.0).abs() < 1e-9);
        assert!((softplus_neg(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

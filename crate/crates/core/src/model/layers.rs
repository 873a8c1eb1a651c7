use std::sync::Arc;

use super::index::PropagationIndex;
use super::params::{AttentionVars, LayerParamVars, ModelParams, ParamVars};
use super::{ModelConfig, Paradigm};
use crate::error::{Error, Result};
use crate::graph::BehaviorId;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// User and item representations of one layer, `[|U|, d]` and `[|I|, d]`.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub users: Var,
    pub items: Var,
}

/// Materialized [`LayerVars`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput<T> {
    pub users: Tensor<T>,
    pub items: Tensor<T>,
}

impl<T: Scalar> LayerOutput<T> {
    pub fn from_vars(tape: &Tape<T>, vars: LayerVars) -> Self {
        Self {
            users: tape.value(vars.users).clone(),
            items: tape.value(vars.items).clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.users.is_finite() && self.items.is_finite()
    }
}

/// Behavior-specific representations of one intra-behavior layer, together
/// with the attention weights of every edge (in the behavior's edge order).
#[derive(Debug, Clone, Copy)]
pub struct IntraOutput {
    pub users: Var,
    pub items: Var,
    pub user_attention: Var,
    pub item_attention: Var,
}

/// Output of one inter-behavior layer. `*_behavior_attention` are the
/// per-pair softmax weights over behaviors (records concatenated in behavior
/// order); `*_neighbor_attention` are the per-target weights over union
/// neighbors (in pair order).
#[derive(Debug, Clone, Copy)]
pub struct InterOutput {
    pub output: LayerVars,
    pub user_behavior_attention: Var,
    pub item_behavior_attention: Var,
    pub user_neighbor_attention: Var,
    pub item_neighbor_attention: Var,
}

fn inv_sqrt_dim<T: Scalar>(d: usize) -> T {
    T::of((1.0 / d as f64).sqrt())
}

/// Rows `x_j` of the attended sources, optionally shifted by a per-edge
/// encoding.
enum Sources<'a> {
    /// Rows of a table picked by index; transforms are applied to the
    /// whole table.
    Table(Var, &'a Arc<[usize]>),
    /// Already one row per entry.
    Rows(Var),
}

/// Transformed sources as a table plus the row each entry reads.
struct Transformed {
    table: Var,
    index: Arc<[usize]>,
}

fn transform_sources<T: Scalar>(tape: &mut Tape<T>, sources: &Sources<'_>, m: Var) -> Result<Transformed> {
    let mt = tape.transpose(m)?;
    Ok(match sources {
        Sources::Table(table, idx) => Transformed {
            table: tape.matmul(*table, mt)?,
            index: Arc::clone(idx),
        },
        Sources::Rows(rows) => {
            let n = tape.shape(*rows)[0];
            Transformed {
                table: tape.matmul(*rows, mt)?,
                index: (0..n).collect(),
            }
        }
    })
}

/// Scaled dot-product attention of each target over its entries:
/// softmax over `(Q e_t)·(K x_j)·√(1/d)` then `Σ α V x_j`.
fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    targets: Var,
    segment: &Arc<[usize]>,
    sources: Sources<'_>,
    attn: &AttentionVars,
    count: usize,
    dim: usize,
) -> Result<(Var, Var)> {
    let (logits, values) = attention_logits(tape, targets, segment, &sources, attn, dim)?;
    let weights = tape.segment_softmax(logits, Arc::clone(segment))?;
    let out = tape.gather_weighted_sum(weights, values.table, values.index, Arc::clone(segment), count)?;
    Ok((out, weights))
}

fn attention_logits<T: Scalar>(
    tape: &mut Tape<T>,
    targets: Var,
    segment: &Arc<[usize]>,
    sources: &Sources<'_>,
    attn: &AttentionVars,
    dim: usize,
) -> Result<(Var, Transformed)> {
    let qt = tape.transpose(attn.query)?;
    let q_all = tape.matmul(targets, qt)?;
    let k = transform_sources(tape, sources, attn.key)?;
    let v = transform_sources(tape, sources, attn.value)?;
    let raw = tape.gather_dot(q_all, Arc::clone(segment), k.table, k.index)?;
    let logits = tape.scale(raw, inv_sqrt_dim(dim));
    Ok((logits, v))
}

fn shifted_sources<'a, T: Scalar>(
    tape: &mut Tape<T>,
    table: Var,
    idx: &'a Arc<[usize]>,
    encoding: Option<&Tensor<T>>,
) -> Result<Sources<'a>> {
    Ok(match encoding {
        None => Sources::Table(table, idx),
        Some(pe) => {
            let rows = tape.gather(table, Arc::clone(idx))?;
            let pe = tape.constant(pe.clone());
            Sources::Rows(tape.add(rows, pe)?)
        }
    })
}

/// One intra-behavior attention pass over the single-behavior graph of
/// `behavior`, in both directions (items → users and users → items).
/// Targets without neighbors under `behavior` get the zero vector.
pub fn intra_layer<T: Scalar>(
    tape: &mut Tape<T>,
    index: &PropagationIndex<T>,
    inputs: LayerVars,
    attn: &AttentionVars,
    behavior: BehaviorId,
) -> Result<IntraOutput> {
    let edges = &index.behaviors[behavior.index()];
    let d = index.dim;

    let src = shifted_sources(tape, inputs.items, &edges.items, edges.encoding.as_ref())?;
    let (users, user_attention) = attend(tape, inputs.users, &edges.users, src, attn, index.num_users, d)?;

    let src = shifted_sources(tape, inputs.users, &edges.users, edges.encoding.as_ref())?;
    let (items, item_attention) = attend(tape, inputs.items, &edges.items, src, attn, index.num_items, d)?;

    Ok(IntraOutput {
        users,
        items,
        user_attention,
        item_attention,
    })
}

fn personalized_average<T: Scalar>(tape: &mut Tape<T>, parts: &[Var]) -> Result<Var> {
    let (rows, d) = match tape.shape(parts[0]) {
        [r, c] => (*r, *c),
        s => {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "intra_aggregate",
                left: s.to_vec(),
                right: vec![0, 0],
            }
            .into())
        }
    };
    let present: Vec<Vec<bool>> = parts
        .iter()
        .map(|&p| {
            let v = tape.value(p);
            (0..rows).map(|r| v.row(r).iter().any(|&x| x != T::zero())).collect()
        })
        .collect();
    let counts: Vec<usize> = (0..rows)
        .map(|r| present.iter().filter(|p| p[r]).count())
        .collect();

    let mut acc: Option<Var> = None;
    for (k, &part) in parts.iter().enumerate() {
        if tape.shape(part) != [rows, d] {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "intra_aggregate",
                left: vec![rows, d],
                right: tape.shape(part).to_vec(),
            }
            .into());
        }
        let w: Vec<T> = (0..rows)
            .map(|r| {
                if present[k][r] {
                    T::one() / T::of(counts[r] as f64)
                } else {
                    T::zero()
                }
            })
            .collect();
        let w = tape.constant(Tensor::vector(w));
        let scaled = tape.scale_rows(part, w)?;
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled)?,
        });
    }
    Ok(acc.expect("at least one behavior"))
}

/// Averages each node's behavior-specific representations over the
/// behaviors whose representation is nonzero; a node with none gets zero.
pub fn intra_aggregate<T: Scalar>(tape: &mut Tape<T>, per_behavior: &[LayerVars]) -> Result<LayerVars> {
    if per_behavior.is_empty() {
        return Err(Error::Config("intra_aggregate needs at least one behavior".into()));
    }
    let users: Vec<Var> = per_behavior.iter().map(|x| x.users).collect();
    let items: Vec<Var> = per_behavior.iter().map(|x| x.items).collect();
    Ok(LayerVars {
        users: personalized_average(tape, &users)?,
        items: personalized_average(tape, &items)?,
    })
}

/// Phase 1 of the inter paradigm: per connected pair, attention over the
/// behaviors present on that pair. Returns `[pairs, d]` and the weights.
fn fuse_pair_behaviors<T: Scalar>(
    tape: &mut Tape<T>,
    index: &PropagationIndex<T>,
    targets: Var,
    sources: Var,
    users_are_targets: bool,
    layer: &LayerParamVars,
) -> Result<(Var, Var)> {
    let d = index.dim;
    let mut logit_parts = Vec::new();
    let mut value_parts = Vec::new();
    for (b, edges) in index.behaviors.iter().enumerate() {
        if edges.users.is_empty() {
            continue;
        }
        let (t_idx, s_idx) = if users_are_targets {
            (&edges.users, &edges.items)
        } else {
            (&edges.items, &edges.users)
        };
        let src = shifted_sources(tape, sources, s_idx, edges.encoding.as_ref())?;
        let (logits, values) = attention_logits(tape, targets, t_idx, &src, &layer.behaviors[b], d)?;
        logit_parts.push(logits);
        value_parts.push(values);
    }
    if logit_parts.is_empty() {
        let reps = tape.constant(Tensor::zeros(vec![0, d]));
        let weights = tape.constant(Tensor::zeros(vec![0]));
        return Ok((reps, weights));
    }
    let logits = tape.concat(&logit_parts)?;
    let mut tables = Vec::with_capacity(value_parts.len());
    let mut rows: Vec<usize> = Vec::with_capacity(index.record_pairs.len());
    let mut offset = 0;
    for v in value_parts {
        rows.extend(v.index.iter().map(|&j| j + offset));
        offset += tape.shape(v.table)[0];
        tables.push(v.table);
    }
    let values = tape.concat(&tables)?;
    let weights = tape.segment_softmax(logits, Arc::clone(&index.record_pairs))?;
    let reps = tape.gather_weighted_sum(
        weights,
        values,
        rows.into(),
        Arc::clone(&index.record_pairs),
        index.num_pairs(),
    )?;
    Ok((reps, weights))
}

/// One inter-behavior layer: behavior fusion per connected pair, then
/// attention over union neighbors with the layer's shared transforms.
/// Isolated nodes get the zero vector.
pub fn inter_layer<T: Scalar>(
    tape: &mut Tape<T>,
    index: &PropagationIndex<T>,
    inputs: LayerVars,
    layer: &LayerParamVars,
) -> Result<InterOutput> {
    let shared = layer
        .shared
        .as_ref()
        .ok_or_else(|| Error::Config("inter layer needs shared attention parameters".into()))?;
    let d = index.dim;

    let (user_pairs, user_behavior_attention) =
        fuse_pair_behaviors(tape, index, inputs.users, inputs.items, true, layer)?;
    let (users, user_neighbor_attention) = attend(
        tape,
        inputs.users,
        &index.pair_users,
        Sources::Rows(user_pairs),
        shared,
        index.num_users,
        d,
    )?;

    let (item_pairs, item_behavior_attention) =
        fuse_pair_behaviors(tape, index, inputs.items, inputs.users, false, layer)?;
    let (items, item_neighbor_attention) = attend(
        tape,
        inputs.items,
        &index.pair_items,
        Sources::Rows(item_pairs),
        shared,
        index.num_items,
        d,
    )?;

    Ok(InterOutput {
        output: LayerVars { users, items },
        user_behavior_attention,
        item_behavior_attention,
        user_neighbor_attention,
        item_neighbor_attention,
    })
}

/// Runs `config.num_layers` layers of the configured paradigm from the
/// embedding tables and returns the last layer's output.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    index: &PropagationIndex<T>,
    config: &ModelConfig,
    params: &ParamVars,
) -> Result<LayerVars> {
    let mut current = LayerVars {
        users: params.user_emb,
        items: params.item_emb,
    };
    for (l, layer) in params.layers.iter().enumerate().take(config.num_layers) {
        current = match config.paradigm {
            Paradigm::Intra => {
                let mut parts = Vec::with_capacity(layer.behaviors.len());
                for (b, attn) in layer.behaviors.iter().enumerate() {
                    let out = intra_layer(tape, index, current, attn, BehaviorId(b))?;
                    parts.push(LayerVars {
                        users: out.users,
                        items: out.items,
                    });
                }
                intra_aggregate(tape, &parts)?
            }
            Paradigm::Inter => inter_layer(tape, index, current, layer)?.output,
        };
        if !tape.value(current.users).is_finite() || !tape.value(current.items).is_finite() {
            return Err(Error::NonFinite { layer: l });
        }
    }
    Ok(current)
}

/// Forward pass without gradient tracking.
pub fn forward_values<T: Scalar>(
    index: &PropagationIndex<T>,
    config: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<LayerOutput<T>> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let out = forward(&mut tape, index, config, &vars)?;
    Ok(LayerOutput::from_vars(&tape, out))
}

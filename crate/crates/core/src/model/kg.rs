use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::params::{normal_tensor, ModelParams};
use crate::error::{Error, Result};
use crate::graph::IdMap;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Knowledge-graph triple over entity ids. Ids below the item count are
/// items; larger ids are metadata entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KgTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KgData {
    pub triples: Vec<KgTriple>,
    pub relations: Vec<String>,
    /// Non-item entities; entity id = `num_items + index`.
    pub entities: IdMap,
    pub num_items: usize,
}

impl KgData {
    pub fn num_entities(&self) -> usize {
        self.num_items + self.entities.len()
    }

    /// Distinct tails observed for `relation`, ascending.
    pub fn tail_domain(&self, relation: usize) -> Vec<usize> {
        let mut tails: Vec<usize> = self
            .triples
            .iter()
            .filter(|t| t.relation == relation)
            .map(|t| t.tail)
            .collect();
        tails.sort_unstable();
        tails.dedup();
        tails
    }
}

#[derive(Deserialize)]
struct TripleRow {
    head_id: String,
    relation: String,
    tail_id: String,
}

/// Reads `head_id,relation,tail_id` triples and a relation vocabulary file
/// (one name per line). Heads and tails that are known items map to the
/// item ids; anything else becomes a fresh entity after the items.
pub fn load_kg_triples(
    triples_path: impl AsRef<Path>,
    relations_path: impl AsRef<Path>,
    items: &IdMap,
) -> Result<KgData> {
    let rpath = relations_path.as_ref();
    let relations: Vec<String> = std::fs::read_to_string(rpath)
        .map_err(|e| Error::io(rpath, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();

    let mut data = KgData {
        triples: Vec::new(),
        relations,
        entities: IdMap::new(),
        num_items: items.len(),
    };
    let mut reader = csv::Reader::from_path(triples_path.as_ref())?;
    for row in reader.deserialize::<TripleRow>() {
        let row = row?;
        let relation = data
            .relations
            .iter()
            .position(|r| *r == row.relation)
            .ok_or_else(|| Error::Unknown {
                kind: "relation",
                name: row.relation.clone(),
            })?;
        let mut entity = |id: &str| match items.get(id) {
            Some(i) => i,
            None => data.num_items + data.entities.get_or_insert(id),
        };
        let head = entity(&row.head_id);
        let tail = entity(&row.tail_id);
        data.triples.push(KgTriple { head, relation, tail });
    }
    Ok(data)
}

/// Translation-model parameters. Item entities reuse the recommender's item
/// embeddings, so only metadata entities live here.
#[derive(Debug, Clone, PartialEq)]
pub struct KgParams<T> {
    /// `[entities - items, d]`
    pub entity_emb: Tensor<T>,
    /// `[relations, d_r]`
    pub relation_emb: Tensor<T>,
    /// One `[d_r, d]` projection per relation.
    pub relation_proj: Vec<Tensor<T>>,
    pub num_items: usize,
}

#[derive(Debug, Clone)]
pub struct KgParamVars {
    pub entity_emb: Var,
    pub relation_emb: Var,
    pub relation_proj: Vec<Var>,
}

impl<T: Scalar> KgParams<T> {
    pub fn init(data: &KgData, dim: usize, relation_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entity_emb = normal_tensor(&mut rng, vec![data.entities.len(), dim], 1.0 / (dim as f64).sqrt());
        let relation_emb = normal_tensor(
            &mut rng,
            vec![data.relations.len(), relation_dim],
            1.0 / (relation_dim as f64).sqrt(),
        );
        let proj_std = (2.0 / (dim + relation_dim) as f64).sqrt();
        let relation_proj = (0..data.relations.len())
            .map(|_| normal_tensor(&mut rng, vec![relation_dim, dim], proj_std))
            .collect();
        Self {
            entity_emb,
            relation_emb,
            relation_proj,
            num_items: data.num_items,
        }
    }

    pub fn zeros(num_items: usize, num_extra: usize, num_relations: usize, dim: usize, relation_dim: usize) -> Self {
        Self {
            entity_emb: Tensor::zeros(vec![num_extra, dim]),
            relation_emb: Tensor::zeros(vec![num_relations, relation_dim]),
            relation_proj: (0..num_relations)
                .map(|_| Tensor::zeros(vec![relation_dim, dim]))
                .collect(),
            num_items,
        }
    }

    pub fn num_relations(&self) -> usize {
        self.relation_proj.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_items + self.entity_emb.rows()
    }

    pub fn relation_dim(&self) -> usize {
        self.relation_emb.cols()
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.entity_emb, &self.relation_emb];
        out.extend(self.relation_proj.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.entity_emb, &mut self.relation_emb];
        out.extend(self.relation_proj.iter_mut());
        out
    }

    pub fn register(&self, tape: &mut Tape<T>, track: bool) -> KgParamVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| if track { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        self.bind(&vars)
    }

    pub fn bind(&self, vars: &[Var]) -> KgParamVars {
        assert_eq!(vars.len(), 2 + self.relation_proj.len(), "kg parameter count");
        KgParamVars {
            entity_emb: vars[0],
            relation_emb: vars[1],
            relation_proj: vars[2..].to_vec(),
        }
    }

    fn entity_row<'a>(&'a self, params: &'a ModelParams<T>, id: usize) -> Result<&'a [T]> {
        if id < self.num_items {
            Ok(params.item_emb.row(id))
        } else if id < self.num_entities() {
            Ok(self.entity_emb.row(id - self.num_items))
        } else {
            Err(Error::Unknown {
                kind: "entity",
                name: id.to_string(),
            })
        }
    }
}

impl KgParamVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.entity_emb, self.relation_emb];
        out.extend(&self.relation_proj);
        out
    }
}

/// `g(h, r, t) = ‖W_r e_h + e_r − W_r e_t‖`.
pub fn kg_score<T: Scalar>(
    head: usize,
    relation: usize,
    tail: usize,
    params: &ModelParams<T>,
    kg: &KgParams<T>,
) -> Result<T> {
    let w = kg.relation_proj.get(relation).ok_or_else(|| Error::Unknown {
        kind: "relation",
        name: relation.to_string(),
    })?;
    let eh = kg.entity_row(params, head)?;
    let et = kg.entity_row(params, tail)?;
    let er = kg.relation_emb.row(relation);
    let mut total = T::zero();
    for (r, &bias) in er.iter().enumerate() {
        let wr = w.row(r);
        let mut s = bias;
        for k in 0..wr.len() {
            s = s + wr[k] * (eh[k] - et[k]);
        }
        total = total + s * s;
    }
    Ok(total.sqrt())
}

/// Batched translation distances on the tape, in input order.
pub fn kg_scores<T: Scalar>(
    tape: &mut Tape<T>,
    item_emb: Var,
    kg: &KgParamVars,
    triples: &[KgTriple],
) -> Result<Var> {
    let entities = tape.concat(&[item_emb, kg.entity_emb])?;
    let num_entities = tape.shape(entities)[0];
    let mut parts = Vec::new();
    let mut order = Vec::with_capacity(triples.len());
    for (r, &proj) in kg.relation_proj.iter().enumerate() {
        let members: Vec<usize> = (0..triples.len()).filter(|&k| triples[k].relation == r).collect();
        if members.is_empty() {
            continue;
        }
        for &k in &members {
            for id in [triples[k].head, triples[k].tail] {
                if id >= num_entities {
                    return Err(Error::Unknown {
                        kind: "entity",
                        name: id.to_string(),
                    });
                }
            }
        }
        let heads: Arc<[usize]> = members.iter().map(|&k| triples[k].head).collect();
        let tails: Arc<[usize]> = members.iter().map(|&k| triples[k].tail).collect();
        let rel: Arc<[usize]> = vec![r; members.len()].into();
        let h = tape.gather(entities, heads)?;
        let t = tape.gather(entities, tails)?;
        let diff = tape.sub(h, t)?;
        let wt = tape.transpose(proj)?;
        let projected = tape.matmul(diff, wt)?;
        let er = tape.gather(kg.relation_emb, rel)?;
        let shifted = tape.add(projected, er)?;
        let sq = tape.row_norm_sq(shifted)?;
        parts.push(tape.sqrt(sq));
        order.extend(members);
    }
    if order.len() != triples.len() {
        let bad = triples
            .iter()
            .find(|t| t.relation >= kg.relation_proj.len())
            .map_or(0, |t| t.relation);
        return Err(Error::Unknown {
            kind: "relation",
            name: bad.to_string(),
        });
    }
    if parts.is_empty() {
        return Ok(tape.constant(Tensor::zeros(vec![0])));
    }
    let grouped = tape.concat(&parts)?;
    let mut inverse = vec![0; order.len()];
    for (pos, &k) in order.iter().enumerate() {
        inverse[k] = pos;
    }
    Ok(tape.gather(grouped, inverse.into())?)
}

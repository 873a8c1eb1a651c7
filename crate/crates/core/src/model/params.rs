use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Paradigm};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Query/key/value transforms, each `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// One attention block per behavior.
    pub behaviors: Vec<Attention<T>>,
    /// Neighbor-aggregation attention of the inter paradigm.
    pub shared: Option<Attention<T>>,
}

/// Every learned table of the recommender.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub user_emb: Tensor<T>,
    pub item_emb: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    /// Row `b` holds the diagonal of the behavior matrix of behavior `b`.
    pub behavior_diag: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct LayerParamVars {
    pub behaviors: Vec<AttentionVars>,
    pub shared: Option<AttentionVars>,
}

/// [`ModelParams`] registered on a tape.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub user_emb: Var,
    pub item_emb: Var,
    pub layers: Vec<LayerParamVars>,
    pub behavior_diag: Var,
}

pub(crate) fn normal_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape")
}

impl<T: Scalar> Attention<T> {
    fn zeros(d: usize) -> Self {
        Self {
            query: Tensor::zeros(vec![d, d]),
            key: Tensor::zeros(vec![d, d]),
            value: Tensor::zeros(vec![d, d]),
        }
    }

    fn random(rng: &mut ChaCha8Rng, d: usize) -> Self {
        // fan-average: std = sqrt(2 / (fan_in + fan_out))
        let std = (2.0 / (2 * d) as f64).sqrt();
        Self {
            query: normal_tensor(rng, vec![d, d], std),
            key: normal_tensor(rng, vec![d, d], std),
            value: normal_tensor(rng, vec![d, d], std),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Zero tables with the layout implied by `config`.
    pub fn zeros(config: &ModelConfig, num_users: usize, num_items: usize) -> Self {
        let d = config.dim;
        let nb = config.num_behaviors();
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                behaviors: (0..nb).map(|_| Attention::zeros(d)).collect(),
                shared: (config.paradigm == Paradigm::Inter).then(|| Attention::zeros(d)),
            })
            .collect();
        Self {
            user_emb: Tensor::zeros(vec![num_users, d]),
            item_emb: Tensor::zeros(vec![num_items, d]),
            layers,
            behavior_diag: Tensor::zeros(vec![nb, d]),
        }
    }

    /// Embeddings ~ normal with std 1/√d, transforms with fan-average scaling and
    /// all-ones behavior diagonals. Fully determined by `seed`.
    pub fn init(config: &ModelConfig, num_users: usize, num_items: usize, seed: u64) -> Self {
        let d = config.dim;
        let nb = config.num_behaviors();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_std = 1.0 / (d as f64).sqrt();
        let user_emb = normal_tensor(&mut rng, vec![num_users, d], emb_std);
        let item_emb = normal_tensor(&mut rng, vec![num_items, d], emb_std);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                behaviors: (0..nb).map(|_| Attention::random(&mut rng, d)).collect(),
                shared: (config.paradigm == Paradigm::Inter).then(|| Attention::random(&mut rng, d)),
            })
            .collect();
        Self {
            user_emb,
            item_emb,
            layers,
            behavior_diag: Tensor::full(vec![nb, d], T::one()),
        }
    }

    pub fn dim(&self) -> usize {
        self.user_emb.cols()
    }

    pub fn num_users(&self) -> usize {
        self.user_emb.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item_emb.rows()
    }

    /// All tensors in a fixed order shared by [`Self::tensors_mut`] and
    /// [`Self::bind`].
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.user_emb, &self.item_emb, &self.behavior_diag];
        for layer in &self.layers {
            for a in layer.behaviors.iter().chain(layer.shared.iter()) {
                out.extend([&a.query, &a.key, &a.value]);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.user_emb, &mut self.item_emb, &mut self.behavior_diag];
        for layer in &mut self.layers {
            for a in layer.behaviors.iter_mut().chain(layer.shared.iter_mut()) {
                out.extend([&mut a.query, &mut a.key, &mut a.value]);
            }
        }
        out
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors().len()
    }

    pub fn squared_norm(&self) -> T {
        self.tensors().iter().map(|t| t.sum_squares()).sum()
    }

    /// Registers every tensor as a differentiable leaf (or a constant when
    /// `track` is false).
    pub fn register(&self, tape: &mut Tape<T>, track: bool) -> ParamVars {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|t| {
                if track {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        self.bind(&vars)
    }

    /// Maps already-registered vars (in [`Self::tensors`] order) onto the
    /// parameter layout.
    pub fn bind(&self, vars: &[Var]) -> ParamVars {
        assert_eq!(vars.len(), self.num_tensors(), "parameter count");
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("parameter count");
        let user_emb = next();
        let item_emb = next();
        let behavior_diag = next();
        let mut take = || AttentionVars {
            query: next(),
            key: next(),
            value: next(),
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| LayerParamVars {
                behaviors: layer.behaviors.iter().map(|_| take()).collect(),
                shared: layer.shared.as_ref().map(|_| take()),
            })
            .collect();
        ParamVars {
            user_emb,
            item_emb,
            layers,
            behavior_diag,
        }
    }

    /// Widen or narrow every table to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let att = |a: &Attention<T>| Attention {
            query: a.query.cast(),
            key: a.key.cast(),
            value: a.value.cast(),
        };
        ModelParams {
            user_emb: self.user_emb.cast(),
            item_emb: self.item_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    behaviors: l.behaviors.iter().map(att).collect(),
                    shared: l.shared.as_ref().map(att),
                })
                .collect(),
            behavior_diag: self.behavior_diag.cast(),
        }
    }
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.user_emb, self.item_emb, self.behavior_diag];
        for layer in &self.layers {
            for a in layer.behaviors.iter().chain(layer.shared.iter()) {
                out.extend([a.query, a.key, a.value]);
            }
        }
        out
    }

    /// Per-layer transforms and behavior diagonals, i.e. everything except
    /// the embedding tables.
    pub fn transforms(&self) -> Vec<Var> {
        self.all().into_iter().skip(2).collect()
    }
}

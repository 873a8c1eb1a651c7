use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::kg::KgParams;
use super::params::ModelParams;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HMGNCKPT";
const VERSION: u32 = 1;

/// Everything needed to reproduce a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ModelParams<T>,
    pub kg: Option<KgParams<T>>,
}

#[derive(Serialize, Deserialize)]
struct KgLayout {
    num_items: usize,
    num_extra_entities: usize,
    num_relations: usize,
    relation_dim: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    num_users: usize,
    num_items: usize,
    kg: Option<KgLayout>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Checkpoint<T> {
    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = self.params.tensors();
        if let Some(kg) = &self.kg {
            out.extend(kg.tensors());
        }
        out
    }

    /// Layout: magic, version (u32 LE), header length (u64 LE), JSON header,
    /// then every tensor as little-endian f64 in parameter order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            seed: self.seed,
            num_users: self.params.num_users(),
            num_items: self.params.num_items(),
            kg: self.kg.as_ref().map(|kg| KgLayout {
                num_items: kg.num_items,
                num_extra_entities: kg.entity_emb.rows(),
                num_relations: kg.num_relations(),
                relation_dim: kg.relation_dim(),
            }),
            shapes: self.tensors().iter().map(|t| t.shape().to_vec()).collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors() {
            for x in t.data() {
                out.extend_from_slice(&x.to_f64_lossless().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.config.validate()?;

        let params = ModelParams::zeros(&header.config, header.num_users, header.num_items);
        let kg = header.kg.as_ref().map(|k| {
            KgParams::zeros(
                k.num_items,
                k.num_extra_entities,
                k.num_relations,
                header.config.dim,
                k.relation_dim,
            )
        });
        let mut ckpt = Checkpoint {
            config: header.config,
            seed: header.seed,
            params,
            kg,
        };

        let shapes: Vec<Vec<usize>> = ckpt.tensors().iter().map(|t| t.shape().to_vec()).collect();
        if shapes != header.shapes {
            return Err(bad("tensor shapes disagree with the configuration"));
        }
        let mut payload = &bytes[20 + hlen..];
        let mut targets = ckpt.params.tensors_mut();
        if let Some(kg) = ckpt.kg.as_mut() {
            targets.extend(kg.tensors_mut());
        }
        for t in targets {
            for x in t.data_mut() {
                let (head, rest) = payload.split_at_checked(8).ok_or_else(|| bad("truncated payload"))?;
                *x = T::of(f64::from_le_bytes(head.try_into().expect("8 bytes")));
                payload = rest;
            }
        }
        if !payload.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(ckpt)
    }
}

pub fn write_checkpoint<T: Scalar>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::IdMap;
    use crate::model::{KgData, Paradigm};

    #[test]
    fn round_trip_is_bit_exact() {
        let config = ModelConfig {
            dim: 4,
            num_layers: 2,
            paradigm: Paradigm::Inter,
            ..Default::default()
        };
        let params = ModelParams::<f64>::init(&config, 3, 5, 11);
        let data = KgData {
            triples: vec![],
            relations: vec!["r".into()],
            entities: IdMap::from_ids(vec!["e".into()]),
            num_items: 5,
        };
        let ckpt = Checkpoint {
            config,
            seed: 11,
            params,
            kg: Some(KgParams::init(&data, 4, 4, 3)),
        };
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &ckpt).unwrap();
        assert_eq!(read_checkpoint::<f64>(&path).unwrap(), ckpt);
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let config = ModelConfig {
            dim: 2,
            num_layers: 1,
            ..Default::default()
        };
        let ckpt = Checkpoint {
            config: config.clone(),
            seed: 1,
            params: ModelParams::<f32>::init(&config, 2, 2, 1),
            kg: None,
        };
        let back = Checkpoint::<f32>::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        assert!(Checkpoint::<f64>::from_bytes(b"nope").is_err());
        let config = ModelConfig {
            dim: 2,
            num_layers: 1,
            ..Default::default()
        };
        let ckpt = Checkpoint {
            config: config.clone(),
            seed: 1,
            params: ModelParams::<f64>::init(&config, 2, 2, 1),
            kg: None,
        };
        let mut bytes = ckpt.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }
}

use std::path::Path;

use fpscm_autograd::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{CoreError, Result};
use crate::fip::{FipConfig, FipModel, FipParams};
use crate::io::{decode_container, encode_container, read_file, write_file};
use crate::scm::Permutation;

pub const FIP_MAGIC: &[u8; 8] = b"FIPCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct FipHeader {
    config: FipConfig,
    perm: Vec<usize>,
    standardization: Standardization,
    tensors: Vec<TensorEntry>,
}

pub(crate) fn tensor_entries(store: &ParamStore) -> Vec<TensorEntry> {
    store
        .names()
        .iter()
        .zip(store.tensors())
        .map(|(n, t)| TensorEntry {
            name: n.clone(),
            shape: t.shape().to_vec(),
        })
        .collect()
}

/// Splits a flat payload into tensors with the given shapes; the payload
/// must be consumed exactly.
pub(crate) fn split_tensors(entries: &[TensorEntry], payload: &[f64]) -> Result<(ParamStore, usize)> {
    let mut store = ParamStore::new();
    let mut at = 0;
    for e in entries {
        let n: usize = e.shape.iter().product();
        let chunk = payload
            .get(at..at + n)
            .ok_or_else(|| CoreError::Format(format!("payload too short for tensor {}", e.name)))?;
        store.push(e.name.clone(), Tensor::new(&e.shape, chunk.to_vec())?);
        at += n;
    }
    Ok((store, at))
}

impl FipModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FipHeader {
            config: self.params().config().clone(),
            perm: self.perm().map().to_vec(),
            standardization: self.standardization().clone(),
            tensors: tensor_entries(self.params().store()),
        };
        let bufs: Vec<&[f64]> = self.params().store().tensors().iter().map(Tensor::data).collect();
        encode_container(FIP_MAGIC, &serde_json::to_value(header).expect("header serializes"), &bufs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = decode_container(FIP_MAGIC, bytes)?;
        let h: FipHeader = serde_json::from_value(header).map_err(|e| CoreError::Format(format!("checkpoint header: {e}")))?;
        let (store, used) = split_tensors(&h.tensors, &payload)?;
        if used != payload.len() {
            return Err(CoreError::Format("trailing data after the last tensor".into()));
        }
        FipModel::new(FipParams::from_store(h.config, store)?, Permutation::new(h.perm)?, h.standardization)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

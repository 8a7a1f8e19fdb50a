use std::path::Path;

use fpscm_autograd::{Adam, AdamConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fip::{split_tensors, tensor_entries, TensorEntry};
use crate::io::{decode_container, encode_container, read_file, write_file};
use crate::to::encoder::{ToEncoderConfig, ToEncoderParams};
use crate::to::train::{ToLossPoint, ToTrainState};

pub const TO_MAGIC: &[u8; 7] = b"TOCKPT1";

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    curve: Vec<ToLossPoint>,
}

#[derive(Serialize, Deserialize)]
struct ToHeader {
    config: ToEncoderConfig,
    tensors: Vec<TensorEntry>,
    /// Present when the optimizer moments follow the weights.
    optimizer: Option<OptimizerHeader>,
}

fn encode(params: &ToEncoderParams, adam: Option<(&Adam, &[ToLossPoint])>) -> Vec<u8> {
    let store = params.store();
    let mut bufs: Vec<&[f64]> = store.tensors().iter().map(Tensor::data).collect();
    let optimizer = adam.map(|(a, curve)| {
        let (m, v) = a.moments();
        bufs.extend(m.iter().map(Vec::as_slice));
        bufs.extend(v.iter().map(Vec::as_slice));
        OptimizerHeader {
            lr: a.config.lr,
            beta1: a.config.beta1,
            beta2: a.config.beta2,
            eps: a.config.eps,
            weight_decay: a.config.weight_decay,
            step: a.step_count(),
            curve: curve.to_vec(),
        }
    });
    let header = ToHeader {
        config: params.config().clone(),
        tensors: tensor_entries(store),
        optimizer,
    };
    encode_container(TO_MAGIC, &serde_json::to_value(header).expect("header serializes"), &bufs)
}

fn decode(bytes: &[u8]) -> Result<(ToEncoderParams, Option<(Adam, Vec<ToLossPoint>)>)> {
    let (header, payload) = decode_container(TO_MAGIC, bytes)?;
    let h: ToHeader = serde_json::from_value(header).map_err(|e| CoreError::Format(format!("checkpoint header: {e}")))?;
    let (store, mut at) = split_tensors(&h.tensors, &payload)?;
    let params = ToEncoderParams::from_store(h.config, store)?;
    let state = match h.optimizer {
        None => None,
        Some(o) => {
            let mut take = |count: usize| -> Result<Vec<Vec<f64>>> {
                let (s, used) = split_tensors(&h.tensors, payload.get(at..).unwrap_or(&[]))?;
                at += used;
                debug_assert_eq!(s.len(), count);
                Ok(s.tensors().iter().map(|t| t.data().to_vec()).collect())
            };
            let m = take(h.tensors.len())?;
            let v = take(h.tensors.len())?;
            let cfg = AdamConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
            };
            Some((Adam::from_state(cfg, o.step, m, v), o.curve))
        }
    };
    if at != payload.len() {
        return Err(CoreError::Format("trailing data after the last tensor".into()));
    }
    Ok((params, state))
}

impl ToEncoderParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(self, None)
    }

    /// Accepts both weight-only and resumable checkpoints.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(decode(bytes)?.0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

impl ToTrainState {
    pub fn to_bytes(&self) -> Vec<u8> {
        encode(&self.params, Some((&self.adam, &self.curve)))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match decode(bytes)? {
            (params, Some((adam, curve))) => Ok(Self { params, adam, curve }),
            (_, None) => Err(CoreError::Format("checkpoint holds no optimizer state".into())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::to::train::ToTrainConfig;

    #[test]
    fn weights_and_state_round_trip() {
        let p = ToEncoderParams::init(&ToEncoderConfig::default(), 5).unwrap();
        assert_eq!(ToEncoderParams::from_bytes(&p.to_bytes()).unwrap(), p);
        let mut s = ToTrainState::new(p, &ToTrainConfig::default());
        s.curve.push(ToLossPoint { epoch: 0, loss: 0.1 + 0.2, best: 0.3 });
        assert_eq!(ToTrainState::from_bytes(&s.to_bytes()).unwrap(), s);
        assert!(ToTrainState::from_bytes(&s.params.to_bytes()).is_err());
        assert!(ToEncoderParams::from_bytes(&s.to_bytes()).is_ok());
    }
}

use fpscm_autograd::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, rng_for};
use crate::to::dtoe::d_toe;
use crate::to::encoder::ToEncoderParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToTrainConfig {
    /// Sampled steps per dataset; defaults to `max(1, d / 2)` and is capped
    /// at `d`.
    pub d_max: Option<usize>,
    /// Datasets per optimizer step.
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ToTrainConfig {
    fn default() -> Self {
        Self {
            d_max: None,
            batch: 8,
            epochs: 10,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl ToTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(CoreError::Config("batch must be positive".into()));
        }
        if self.d_max == Some(0) {
            return Err(CoreError::Config("d_max must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(CoreError::Config("lr must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }

    pub fn d_max_for(&self, d: usize) -> usize {
        self.d_max.unwrap_or((d / 2).max(1)).min(d).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToLossPoint {
    pub epoch: usize,
    /// Mean d-TOE per dataset.
    pub loss: f64,
    pub best: f64,
}

/// Everything needed to continue an interrupted run.
#[derive(Clone, Debug, PartialEq)]
pub struct ToTrainState {
    pub params: ToEncoderParams,
    pub adam: Adam,
    pub curve: Vec<ToLossPoint>,
}

impl ToTrainState {
    pub fn new(params: ToEncoderParams, config: &ToTrainConfig) -> Self {
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamConfig::default()
            },
            params.store().tensors(),
        );
        Self {
            params,
            adam,
            curve: Vec::new(),
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.curve.len()
    }
}

/// Minimizes the summed d-TOE over `datasets` from a fresh optimizer.
pub fn train_to(init: ToEncoderParams, datasets: &[Dataset], config: &ToTrainConfig) -> Result<ToTrainState> {
    resume_to(ToTrainState::new(init, config), datasets, config)
}

/// Runs the remaining epochs of `state` up to `config.epochs`.
pub fn resume_to(mut state: ToTrainState, datasets: &[Dataset], config: &ToTrainConfig) -> Result<ToTrainState> {
    config.validate()?;
    let graphs = datasets
        .iter()
        .map(|ds| ds.truth().map(|t| &t.dag))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..datasets.len()).collect();
    for epoch in state.epochs_done()..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, &[0x7e, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let params = &state.params;
            let results = chunk
                .par_iter()
                .map(|&k| {
                    let ds = &datasets[k];
                    let tape = Tape::new();
                    let vars = params.store().bind(&tape);
                    let seed = derive_seed(config.seed, &[epoch as u64, k as u64]);
                    let loss = d_toe(&params.on_tape(&vars), &tape, &ds.x, graphs[k], config.d_max_for(ds.d()), seed)?;
                    let value = loss.item();
                    if !value.is_finite() {
                        return Err(CoreError::Numeric {
                            context: format!("d-TOE on dataset {}", ds.provenance.id),
                            index: epoch,
                        });
                    }
                    let grads = tape.backward(loss)?;
                    Ok((value, params.store().collect_grads(&grads, &vars)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut sum: Vec<Tensor> = params.store().tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (value, grads) in results {
                total += value;
                for (s, g) in sum.iter_mut().zip(grads) {
                    s.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            sum.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= scale));
            state.adam.step(state.params.store_mut().tensors_mut(), &sum)?;
        }
        let loss = total / datasets.len().max(1) as f64;
        let best = state.curve.last().map_or(loss, |p| p.best.min(loss));
        state.curve.push(ToLossPoint { epoch, loss, best });
    }
    Ok(state)
}

use fpscm_autograd::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{CoreError, Result};
use crate::fip::{FipConfig, FipModel, FipParams, FipTrainConfig};
use crate::rng::rng_for;
use crate::scm::Permutation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
    pub best_val: f64,
}

/// Row indices of the 80/10/10 train/validation/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_rows(n: usize, seed: u64) -> Result<DataSplit> {
    if n < 3 {
        return Err(CoreError::arg(format!("{n} rows cannot be split into train/validation/test")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[0x5917]));
    let n_val = ((n as f64 * 0.1).round() as usize).max(1);
    let n_test = ((n as f64 * 0.1).round() as usize).max(1);
    let n_train = n - n_val - n_test;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(DataSplit { train: idx, val, test })
}

#[derive(Clone, Debug)]
pub struct FipTrainOutcome {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: FipModel,
    pub curve: Vec<LossPoint>,
    pub test_loss: f64,
    pub steps: u64,
    pub split: DataSplit,
}

/// Rows of `x` reordered into ordered space.
pub fn to_ordered(x: &Matrix, perm: &Permutation) -> Matrix {
    x.select_columns(perm.map())
}

/// Inverse of [`to_ordered`].
pub fn from_ordered(y: &Matrix, perm: &Permutation) -> Matrix {
    y.select_columns(perm.inverse_map())
}

/// Mean over rows and nodes of `(y - T(y, 0))²`.
pub fn anm_mse(params: &FipParams, y: &Matrix) -> Result<f64> {
    let t = params.t_anm_batch(y)?;
    let s: f64 = y.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(s / y.data().len().max(1) as f64)
}

/// Fits `T(·, 0)` by minimizing the ANM reconstruction error on the
/// standardized, ordered data.
pub fn train_mse(dataset: &Dataset, perm: &Permutation, config: &FipConfig, train: &FipTrainConfig, seed: u64) -> Result<FipTrainOutcome> {
    if config.d != dataset.d() || perm.len() != dataset.d() {
        return Err(CoreError::arg(format!(
            "dataset has {} columns, model {} nodes, ordering {}",
            dataset.d(),
            config.d,
            perm.len()
        )));
    }
    train.validate()?;
    let ds = dataset.standardized()?;
    let rec = ds.standardization.clone().expect("standardized dataset carries its record");
    let y = to_ordered(&ds.x, perm);
    let split = split_rows(y.rows(), seed)?;
    let (y_train, y_val, y_test) = (y.select_rows(&split.train), y.select_rows(&split.val), y.select_rows(&split.test));

    let mut params = FipParams::init(config, seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: train.lr,
            weight_decay: train.weight_decay,
            ..AdamConfig::default()
        },
        params.store().tensors(),
    );
    let batch = train
        .batch_size
        .unwrap_or_else(|| 1024.min((0.8 * y.rows() as f64) as usize))
        .clamp(1, y_train.rows());
    let d = config.d;
    let mut best = params.clone();
    let mut best_val = anm_mse(&params, &y_val)?;
    let mut curve = Vec::with_capacity(train.epochs);
    let mut order: Vec<usize> = (0..y_train.rows()).collect();
    for epoch in 0..train.epochs {
        if train.cosine_decay {
            let c = 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / train.epochs as f64).cos());
            adam.config.lr = train.lr * (0.02 + 0.98 * c);
        }
        order.shuffle(&mut rng_for(seed, &[0xe9, epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch) {
            let yb = y_train.select_rows(chunk);
            let tape = Tape::new();
            let vars = params.store().bind(&tape);
            let yv = tape.constant(Tensor::new(&[chunk.len(), d], yb.into_data())?);
            let out = params.on_tape(&vars).forward(yv, tape.constant(Tensor::zeros(&[chunk.len(), d])))?;
            let diff = yv.sub(out)?;
            let loss = diff.mul(diff)?.mean();
            let lv = loss.item();
            if !lv.is_finite() {
                return Err(CoreError::Numeric {
                    context: "training loss".into(),
                    index: adam.step_count() as usize,
                });
            }
            let grads = tape.backward(loss)?;
            let g = params.store().collect_grads(&grads, &vars);
            adam.step(params.store_mut().tensors_mut(), &g).map_err(|e| match e {
                fpscm_autograd::AutogradError::NonFinite { step, .. } => CoreError::Numeric {
                    context: "training gradient".into(),
                    index: step as usize,
                },
                other => other.into(),
            })?;
            total += lv;
            batches += 1;
        }
        let val = anm_mse(&params, &y_val)?;
        if val < best_val {
            best_val = val;
            best = params.clone();
        }
        curve.push(LossPoint {
            epoch,
            train: total / batches.max(1) as f64,
            val,
            best_val,
        });
    }
    let test_loss = anm_mse(&best, &y_test)?;
    Ok(FipTrainOutcome {
        model: FipModel::new(best, perm.clone(), rec)?,
        curve,
        test_loss,
        steps: adam.step_count(),
        split,
    })
}

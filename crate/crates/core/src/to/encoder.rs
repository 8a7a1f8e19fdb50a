use fpscm_autograd::{ParamStore, Tape, Tensor, Var};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToEncoderConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub ln_eps: f64,
}

impl Default for ToEncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            heads: 4,
            blocks: 2,
            mlp_hidden: 64,
            ln_eps: 1e-5,
        }
    }
}

impl ToEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.blocks == 0 || self.mlp_hidden == 0 {
            return Err(CoreError::Config("encoder widths must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(CoreError::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(self.ln_eps > 0.0) {
            return Err(CoreError::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

const SUBLAYER: [&str; 12] = [
    "wq", "wk", "wv", "wo", "ln1_g", "ln1_b", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "ln2_g", "ln2_b",
];

fn layout(c: &ToEncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (e, h) = (c.embed_dim, c.mlp_hidden);
    let mut out = vec![("lift_w".to_string(), vec![CHANNELS, e]), ("lift_b".to_string(), vec![e])];
    for b in 0..c.blocks {
        for axis in ["samples", "nodes"] {
            for name in SUBLAYER {
                let shape = match name {
                    "wq" | "wk" | "wv" | "wo" => vec![e, e],
                    "mlp_w1" => vec![e, h],
                    "mlp_b1" => vec![h],
                    "mlp_w2" => vec![h, e],
                    _ => vec![e],
                };
                out.push((format!("block{b}.{axis}.{name}"), shape));
            }
        }
    }
    out.push(("head_w".to_string(), vec![e, 1]));
    out.push(("head_b".to_string(), vec![1]));
    out
}

/// Axial-attention dataset encoder and linear leaf classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ToEncoderParams {
    config: ToEncoderConfig,
    store: ParamStore,
}

impl ToEncoderParams {
    pub fn init(config: &ToEncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0x70e]);
        let mut store = ParamStore::new();
        for (name, shape) in layout(config) {
            let n: usize = shape.iter().product();
            let leaf = name.rsplit('.').next().unwrap_or(&name).to_string();
            let data = match leaf.as_str() {
                "ln1_g" | "ln2_g" => vec![1.0; n],
                "ln1_b" | "ln2_b" | "mlp_b1" | "mlp_b2" | "head_b" => vec![0.0; n],
                _ => {
                    let std = match leaf.as_str() {
                        "lift_w" | "lift_b" => 1.0,
                        "mlp_w1" => (2.0 / shape[0] as f64).sqrt(),
                        _ => (1.0 / shape[0] as f64).sqrt(),
                    };
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                }
            };
            store.push(name, Tensor::new(&shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            store,
        })
    }

    pub fn from_store(config: ToEncoderConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if store.len() != expected.len() {
            return Err(CoreError::Format(format!(
                "expected {} tensors, found {}",
                expected.len(),
                store.len()
            )));
        }
        for ((name, shape), (got, t)) in expected.iter().zip(store.names().iter().zip(store.tensors())) {
            if name != got || shape.as_slice() != t.shape() {
                return Err(CoreError::Format(format!(
                    "tensor {got} {:?} where {name} {shape:?} was expected",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &ToEncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn on_tape<'a, 't>(&'a self, vars: &'a [Var<'t>]) -> ToEncoderGraph<'a, 't> {
        ToEncoderGraph { params: self, vars }
    }

    /// Leaf logits for a raw `[n, d]` dataset, without gradients.
    pub fn logits(&self, x: &Matrix) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = self.store.bind_frozen(&tape);
        let p = self.on_tape(&vars).logits(x)?;
        let out = p.data().to_vec();
        Ok(out)
    }
}

/// Input channels per entry: the centered value and its least-squares
/// residual on the other columns.
pub const CHANNELS: usize = 2;

/// `[n, d, CHANNELS]` features. Columns are centered and everything is
/// divided by one scale shared by all columns, so relative variances
/// survive.
pub fn normalize_input(x: &Matrix) -> Vec<f64> {
    let (n, d) = (x.rows(), x.cols());
    let means = x.column_means();
    let var = x.column_stds().iter().map(|s| s * s).sum::<f64>() / d.max(1) as f64;
    let scale = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
    let mut z = x.clone();
    for r in 0..n {
        for (v, m) in z.row_mut(r).iter_mut().zip(&means) {
            *v = (*v - m) / scale;
        }
    }
    let prec = precision(&z);
    let mut out = Vec::with_capacity(n * d * CHANNELS);
    for r in 0..n {
        let row = z.row(r);
        for j in 0..d {
            let resid = match &prec {
                Some(p) if d > 1 => (0..d).map(|k| p[(j, k)] * row[k]).sum::<f64>() / p[(j, j)],
                _ => row[j],
            };
            out.push(row[j]);
            out.push(resid);
        }
    }
    out
}

/// Inverse of the ridge-stabilized sample covariance.
fn precision(z: &Matrix) -> Option<DMatrix<f64>> {
    let d = z.cols();
    if z.rows() < 2 {
        return None;
    }
    let c = z.covariance();
    let ridge = 1e-9 * (0..d).map(|j| c[j][j]).sum::<f64>().max(1e-12) / d as f64;
    DMatrix::from_fn(d, d, |i, j| c[i][j] + if i == j { ridge } else { 0.0 }).try_inverse()
}

pub struct ToEncoderGraph<'a, 't> {
    params: &'a ToEncoderParams,
    vars: &'a [Var<'t>],
}

impl<'t> ToEncoderGraph<'_, 't> {
    /// Post-norm self-attention and MLP sublayer attending over axis 1 of
    /// `[B, L, D]`.
    fn sublayer(&self, h: Var<'t>, base: usize) -> Result<Var<'t>> {
        let c = &self.params.config;
        let w = &self.vars[base..base + SUBLAYER.len()];
        let (q, k, v) = (h.matmul(w[0])?, h.matmul(w[1])?, h.matmul(w[2])?);
        let hd = c.head_dim();
        let scale = (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(c.heads);
        for i in 0..c.heads {
            let (qh, kh, vh) = (q.slice_last(i * hd, hd)?, k.slice_last(i * hd, hd)?, v.slice_last(i * hd, hd)?);
            heads.push(qh.bmm(kh.transpose()?)?.softmax(scale).bmm(vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { h.tape().concat_last(&heads)? };
        let z = h.add(cat.matmul(w[3])?)?.layer_norm(w[4], w[5], c.ln_eps)?;
        let m = z.matmul(w[6])?.add(w[7])?.relu().matmul(w[8])?.add(w[9])?;
        Ok(z.add(m)?.layer_norm(w[10], w[11], c.ln_eps)?)
    }

    /// Per-node embeddings `[d, D]` of a raw `[n, d]` dataset.
    pub fn encode(&self, x: &Matrix) -> Result<Var<'t>> {
        let (n, d) = (x.rows(), x.cols());
        if n == 0 || d == 0 {
            return Err(CoreError::arg("cannot encode an empty dataset"));
        }
        let tape = self.vars[0].tape();
        let input = tape.constant(Tensor::new(&[n, d, CHANNELS], normalize_input(x))?);
        let mut h = input.matmul(self.vars[0])?.add(self.vars[1])?;
        let per_block = 2 * SUBLAYER.len();
        for b in 0..self.params.config.blocks {
            let base = 2 + b * per_block;
            h = self.sublayer(h.swap_axes(0, 1)?, base)?.swap_axes(0, 1)?;
            h = self.sublayer(h, base + SUBLAYER.len())?;
        }
        Ok(h.mean_axis(0)?)
    }

    /// `[d]` leaf logits.
    pub fn logits(&self, x: &Matrix) -> Result<Var<'t>> {
        let e = self.encode(x)?;
        let k = self.vars.len();
        let p = e.matmul(self.vars[k - 2])?.add(self.vars[k - 1])?;
        Ok(p.reshape(&[x.cols()])?)
    }
}

use fpscm_autograd::{ParamStore, Tape, Tensor, Var};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::fip::FipConfig;
use crate::rng::rng_for;

const PER_LAYER: usize = 12;
/// Rows per frozen forward pass in batched evaluation.
const EVAL_CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedSide {
    Observation,
    Noise,
}

/// Parameter tensors of the transformer, in a fixed layout derived from
/// the config.
#[derive(Clone, Debug, PartialEq)]
pub struct FipParams {
    config: FipConfig,
    store: ParamStore,
}

#[derive(Clone, Copy, Debug)]
struct LayerIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

fn layer_idx(l: usize) -> LayerIdx {
    let b = 3 + PER_LAYER * l;
    LayerIdx {
        wq: b,
        wk: b + 1,
        wv: b + 2,
        wo: b + 3,
        ln1_g: b + 4,
        ln1_b: b + 5,
        w1: b + 6,
        b1: b + 7,
        w2: b + 8,
        b2: b + 9,
        ln2_g: b + 10,
        ln2_b: b + 11,
    }
}

fn layout(c: &FipConfig) -> Vec<(String, Vec<usize>)> {
    let (d, dm, aw, hid) = (c.d, c.embed_dim, c.attn_width(), c.mlp_hidden);
    let mut out = vec![
        ("theta_x".to_string(), vec![d, dm]),
        ("theta_n".to_string(), vec![d, dm]),
        ("pos".to_string(), vec![d, dm]),
    ];
    for l in 0..c.layers {
        for (name, shape) in [
            ("wq", vec![dm, aw]),
            ("wk", vec![dm, aw]),
            ("wv", vec![dm, aw]),
            ("wo", vec![aw, dm]),
            ("ln1_g", vec![dm]),
            ("ln1_b", vec![dm]),
            ("mlp_w1", vec![dm, hid]),
            ("mlp_b1", vec![hid]),
            ("mlp_w2", vec![hid, dm]),
            ("mlp_b2", vec![dm]),
            ("ln2_g", vec![dm]),
            ("ln2_b", vec![dm]),
        ] {
            out.push((format!("layer{l}.{name}"), shape));
        }
    }
    out.push(("decoder".to_string(), vec![d, dm]));
    out
}

impl FipParams {
    /// Gaussian initialization scaled by fan-in; layer-norm gains one and
    /// biases zero.
    pub fn init(config: &FipConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, &[0xf1b]);
        let mut store = ParamStore::new();
        for (name, shape) in layout(config) {
            let n: usize = shape.iter().product();
            let leaf = name.rsplit('.').next().unwrap_or(&name);
            let data = match leaf {
                "ln1_g" | "ln2_g" => vec![1.0; n],
                "ln1_b" | "ln2_b" | "mlp_b1" | "mlp_b2" => vec![0.0; n],
                _ => {
                    let std = match leaf {
                        "theta_x" | "theta_n" | "pos" => 1.0,
                        "mlp_w1" => (2.0 / shape[0] as f64).sqrt(),
                        "decoder" => (1.0 / shape[1] as f64).sqrt(),
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

    /// Rebuilds parameters from stored tensors, checking names and shapes.
    pub fn from_store(config: FipConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != store.len() {
            return Err(CoreError::Format(format!("expected {} tensors, found {}", expected.len(), store.len())));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(store.names().iter().zip(store.tensors())) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(CoreError::Format(format!(
                    "tensor {got_name} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, store })
    }

    pub fn config(&self) -> &FipConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    /// Tape view with the parameters bound as `vars` (trainable or frozen).
    pub fn on_tape<'a, 't>(&'a self, vars: &'a [Var<'t>]) -> FipGraph<'a, 't> {
        FipGraph { params: self, vars }
    }

    /// `T(x, n)` for every row, in ordered coordinates.
    pub fn t_batch(&self, x: &Matrix, n: Option<&Matrix>) -> Result<Matrix> {
        let d = self.d();
        if x.cols() != d || n.is_some_and(|n| n.cols() != d || n.rows() != x.rows()) {
            return Err(CoreError::arg(format!("inputs must have {d} columns and matching rows")));
        }
        let mut out = Vec::with_capacity(x.rows() * d);
        let mut start = 0;
        while start < x.rows() {
            let end = (start + EVAL_CHUNK).min(x.rows());
            let tape = Tape::new();
            let vars = self.store.bind_frozen(&tape);
            let g = self.on_tape(&vars);
            let b = end - start;
            let xv = tape.constant(Tensor::new(&[b, d], x.row_range(start, end).into_data())?);
            let nv = match n {
                Some(n) => tape.constant(Tensor::new(&[b, d], n.row_range(start, end).into_data())?),
                None => tape.constant(Tensor::zeros(&[b, d])),
            };
            let y = g.forward(xv, nv)?;
            out.extend_from_slice(&y.data());
            start = end;
        }
        Matrix::new(x.rows(), d, out)
    }

    /// `T(y, 0)` for every row.
    pub fn t_anm_batch(&self, y: &Matrix) -> Result<Matrix> {
        self.t_batch(y, None)
    }

    pub fn t_forward(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
        let d = self.d();
        Ok(self
            .t_batch(&Matrix::new(1, d, x.to_vec())?, Some(&Matrix::new(1, d, n.to_vec())?))?
            .into_data())
    }

    pub fn t_anm(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.t_anm_batch(&Matrix::new(1, self.d(), x.to_vec())?)?.into_data())
    }

    /// `E(w)`: row `j` is `w_j θ_j + Pos_j`.
    pub fn causal_embed(&self, w: &[f64], side: EmbedSide) -> Result<Matrix> {
        let tape = Tape::new();
        let vars = self.store.bind_frozen(&tape);
        let e = self.on_tape(&vars).embed(tape.constant(Tensor::new(&[w.len()], w.to_vec())?), side)?;
        let shape = e.shape();
        Matrix::new(shape[0], shape[1], e.value().into_data())
    }

    /// One encoder layer on single `d × D` embeddings.
    pub fn encoder_layer(&self, layer: usize, x_emb: &Matrix, n_emb: &Matrix) -> Result<Matrix> {
        if layer >= self.config.layers {
            return Err(CoreError::arg(format!("layer {layer} out of range")));
        }
        let tape = Tape::new();
        let vars = self.store.bind_frozen(&tape);
        let shape = [x_emb.rows(), x_emb.cols()];
        let xe = tape.constant(Tensor::new(&shape, x_emb.data().to_vec())?);
        let ne = tape.constant(Tensor::new(&shape, n_emb.data().to_vec())?);
        let out = self.on_tape(&vars).layer(layer, xe, ne)?;
        Matrix::new(shape[0], shape[1], out.value().into_data())
    }

    /// Per-row Jacobian of `T(·, 0)` in ordered coordinates, computed by
    /// reverse mode (one backward pass per output coordinate).
    pub fn anm_jacobians(&self, y: &Matrix) -> Result<Vec<DMatrix<f64>>> {
        let (b, d) = (y.rows(), self.d());
        let mut out = vec![DMatrix::zeros(d, d); b];
        let mut start = 0;
        while start < b {
            let end = (start + EVAL_CHUNK).min(b);
            let rows = end - start;
            let tape = Tape::new();
            let vars = self.store.bind_frozen(&tape);
            let yv = tape.param(Tensor::new(&[rows, d], y.row_range(start, end).into_data())?);
            let t = self.on_tape(&vars).forward(yv, tape.constant(Tensor::zeros(&[rows, d])))?;
            for i in 0..d {
                let grads = tape.backward(t.slice_last(i, 1)?.sum())?;
                let g = grads.get_or_zeros(yv);
                for r in 0..rows {
                    for j in 0..d {
                        out[start + r][(i, j)] = g.data()[r * d + j];
                    }
                }
            }
            start = end;
        }
        Ok(out)
    }
}

/// The transformer's computations recorded on a tape.
pub struct FipGraph<'a, 't> {
    params: &'a FipParams,
    vars: &'a [Var<'t>],
}

impl<'t> FipGraph<'_, 't> {
    /// `[.., d] -> [.., d, D]`.
    pub fn embed(&self, w: Var<'t>, side: EmbedSide) -> Result<Var<'t>> {
        let theta = match side {
            EmbedSide::Observation => self.vars[0],
            EmbedSide::Noise => self.vars[1],
        };
        Ok(w.diag_embed(theta)?.add(self.vars[2])?)
    }

    /// `h(CA(N W_Q, X W_K) X W_V W_O + N)` with `h = LN ∘ (I + MLP) ∘ LN`
    /// and one causal attention matrix per head.
    pub fn layer(&self, l: usize, xe: Var<'t>, ne: Var<'t>) -> Result<Var<'t>> {
        let c = &self.params.config;
        let ix = layer_idx(l);
        let v = self.vars;
        let q = ne.matmul(v[ix.wq])?;
        let k = xe.matmul(v[ix.wk])?;
        let val = xe.matmul(v[ix.wv])?;
        let scale = (c.embed_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let (qh, kh, vh) = (
                q.slice_last(h * c.head_dim, c.head_dim)?,
                k.slice_last(h * c.head_dim, c.head_dim)?,
                val.slice_last(h * c.head_dim, c.head_dim)?,
            );
            let a = qh.bmm(kh.transpose()?)?.causal_attention(scale)?;
            heads.push(a.bmm(vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { xe.tape().concat_last(&heads)? };
        let s = cat.matmul(v[ix.wo])?.add(ne)?;
        let z = s.layer_norm(v[ix.ln1_g], v[ix.ln1_b], c.ln_eps)?;
        let m = z
            .matmul(v[ix.w1])?
            .add(v[ix.b1])?
            .relu()
            .matmul(v[ix.w2])?
            .add(v[ix.b2])?;
        Ok(z.add(m)?.layer_norm(v[ix.ln2_g], v[ix.ln2_b], c.ln_eps)?)
    }

    /// `J(e)_i = ⟨e_i, w_i⟩`: `[.., d, D] -> [.., d]`.
    pub fn decode(&self, e: Var<'t>) -> Result<Var<'t>> {
        let dec = self.vars[3 + PER_LAYER * self.params.config.layers];
        let shape = e.shape();
        Ok(e.mul(dec)?.sum_axis(shape.len() - 1)?)
    }

    /// `T(x, n)` for `x, n` of shape `[B, d]`.
    pub fn forward(&self, x: Var<'t>, n: Var<'t>) -> Result<Var<'t>> {
        let xe = self.embed(x, EmbedSide::Observation)?;
        let mut h = self.embed(n, EmbedSide::Noise)?;
        for l in 0..self.params.config.layers {
            h = self.layer(l, xe, h)?;
        }
        self.decode(h)
    }
}

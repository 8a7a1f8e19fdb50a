use std::cell::{Ref, RefCell};

use crate::error::{AutogradError, Result};
use crate::kernels::{gemm, swap_axes};
use crate::tensor::Tensor;

/// Recorded operation. Inputs are node ids, always smaller than the id of
/// the node that owns the op.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    SwapAxes(usize, usize, usize),
    Reshape(usize),
    Slice { input: usize, start: usize },
    Concat(Vec<usize>),
    Sum(usize),
    SumAxis(usize, usize),
    Exp(usize),
    Log(usize),
    MaxConst(usize, f64),
    Reciprocal(usize),
    Relu(usize),
    LogSigmoid(usize),
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        rstd: Vec<f64>,
    },
    CausalAttention {
        input: usize,
        scale: f64,
        normalized: Vec<bool>,
    },
    Softmax {
        input: usize,
        scale: f64,
    },
    DiagEmbed(usize, usize),
    Opaque {
        name: String,
        inputs: Vec<usize>,
    },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | BatchMatMul(a, b) => vec![*a, *b],
            DiagEmbed(a, b) => vec![*a, *b],
            Neg(a) | Scale(a, _) | AddScalar(a) | SwapAxes(a, _, _) | Reshape(a) | Sum(a) => {
                vec![*a]
            }
            SumAxis(a, _) | Exp(a) | Log(a) | MaxConst(a, _) | Reciprocal(a) | Relu(a) => vec![*a],
            LogSigmoid(a) => vec![*a],
            Slice { input, .. } | CausalAttention { input, .. } | Softmax { input, .. } => {
                vec![*input]
            }
            LayerNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Concat(ids) => ids.clone(),
            Opaque { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of evaluated operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like it when nothing flowed there.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn suffix_period(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        Ok(b.iter().product())
    } else {
        Err(AutogradError::ShapeMismatch {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    /// Records a value produced outside the engine. It has no backward
    /// rule: `backward` fails if a gradient must flow through it.
    pub fn opaque<'t>(&'t self, name: &str, inputs: &[Var<'t>], value: Tensor) -> Var<'t> {
        let op = Op::Opaque {
            name: name.to_string(),
            inputs: inputs.iter().map(|v| v.id).collect(),
        };
        self.record(value, op)
    }

    pub fn concat_last<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let first = parts.first().ok_or(AutogradError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let lead = {
            let s = nodes[first.id].value.shape();
            s[..s.len() - 1].to_vec()
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = nodes[p.id].value.shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(AutogradError::ShapeMismatch {
                    op: "concat",
                    lhs: nodes[first.id].value.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = vec![0.0; rows * total];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = nodes[p.id].value.data();
            for r in 0..rows {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead;
        shape.push(total);
        drop(nodes);
        let value = Tensor::new(&shape, out)?;
        Ok(self.record(value, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(AutogradError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        if root.requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backward_node(&nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| g.map(|g| Tensor::new(nodes[id].value.shape(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backward_node(
    nodes: &[Node],
    node: &Node,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
) -> Result<()> {
    let val = |i: usize| nodes[i].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Opaque { name, .. } => return Err(AutogradError::Unsupported(name.clone())),
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            accumulate(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi)
            });
            let period = nodes[*b].value.numel();
            accumulate(grads, nodes, *b, |gb| {
                for (i, gi) in g.iter().enumerate() {
                    gb[i % period] += sign * gi;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let period = bv.len();
            accumulate(grads, nodes, *a, |ga| {
                for (i, gi) in g.iter().enumerate() {
                    ga[i] += gi * bv[i % period];
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for (i, gi) in g.iter().enumerate() {
                    gb[i % period] += gi * av[i];
                }
            });
        }
        Op::Neg(a) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x -= gi)
        }),
        Op::Scale(a, c) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += c * gi)
        }),
        Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, nodes, *a, |ga| {
            ga.iter_mut().zip(g).for_each(|(x, gi)| *x += gi)
        }),
        Op::MatMul(a, w) => {
            let wt = &nodes[*w].value;
            let (k, n) = (wt.shape()[0], wt.shape()[1]);
            let rows = nodes[*a].value.numel() / k;
            let (av, wv) = (val(*a), wt.data());
            accumulate(grads, nodes, *a, |ga| {
                gemm(rows, n, k, 1.0, g, n, 1, wv, 1, n, 1.0, ga, k, 1)
            });
            accumulate(grads, nodes, *w, |gw| {
                gemm(k, rows, n, 1.0, av, 1, k, g, n, 1, 1.0, gw, n, 1)
            });
        }
        Op::BatchMatMul(a, b) => {
            let (sa, sb) = (nodes[*a].value.shape(), nodes[*b].value.shape());
            let r = sa.len();
            let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
            let batch = nodes[*a].value.numel() / (m * k);
            let (av, bv) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, |ga| {
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let bt = &bv[t * k * n..(t + 1) * k * n];
                    gemm(m, n, k, 1.0, gt, n, 1, bt, 1, n, 1.0, &mut ga[t * m * k..(t + 1) * m * k], k, 1);
                }
            });
            accumulate(grads, nodes, *b, |gb| {
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    let at = &av[t * m * k..(t + 1) * m * k];
                    gemm(k, m, n, 1.0, at, 1, k, gt, n, 1, 1.0, &mut gb[t * k * n..(t + 1) * k * n], n, 1);
                }
            });
        }
        Op::SwapAxes(a, a0, a1) => {
            let back = swap_axes(g, node.value.shape(), *a0, *a1);
            accumulate(grads, nodes, *a, |ga| {
                ga.iter_mut().zip(&back).for_each(|(x, gi)| *x += gi)
            });
        }
        Op::Slice { input, start } => {
            let w_in = nodes[*input].value.last_dim();
            let w_out = node.value.last_dim();
            let rows = node.value.numel() / w_out.max(1);
            accumulate(grads, nodes, *input, |ga| {
                for r in 0..rows {
                    for c in 0..w_out {
                        ga[r * w_in + start + c] += g[r * w_out + c];
                    }
                }
            });
        }
        Op::Concat(parts) => {
            let total = node.value.last_dim();
            let rows = node.value.numel() / total.max(1);
            let mut off = 0;
            for &p in parts {
                let w = nodes[p].value.last_dim();
                accumulate(grads, nodes, p, |gp| {
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + off + c];
                        }
                    }
                });
                off += w;
            }
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        Op::SumAxis(a, axis) => {
            let shape = nodes[*a].value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            accumulate(grads, nodes, *a, |ga| {
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            ga[(o * len + l) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            });
        }
        Op::Exp(a) => accumulate(grads, nodes, *a, |ga| {
            for i in 0..ga.len() {
                ga[i] += g[i] * out[i];
            }
        }),
        Op::Log(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] / av[i];
                }
            })
        }
        Op::MaxConst(a, c) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..ga.len() {
                    if av[i] > *c {
                        ga[i] += g[i];
                    }
                }
            })
        }
        Op::Relu(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..ga.len() {
                    if av[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            })
        }
        Op::Reciprocal(a) => accumulate(grads, nodes, *a, |ga| {
            for i in 0..ga.len() {
                ga[i] -= g[i] * out[i] * out[i];
            }
        }),
        Op::LogSigmoid(a) => {
            let av = val(*a);
            accumulate(grads, nodes, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += g[i] * sigmoid(-av[i]);
                }
            })
        }
        Op::LayerNorm {
            input,
            gamma,
            beta,
            rstd,
        } => {
            let xv = val(*input);
            let gam = val(*gamma);
            let dim = gam.len();
            let rows = xv.len() / dim;
            let mut xhat = vec![0.0; xv.len()];
            for r in 0..rows {
                let row = &xv[r * dim..(r + 1) * dim];
                let mean = row.iter().sum::<f64>() / dim as f64;
                for c in 0..dim {
                    xhat[r * dim + c] = (row[c] - mean) * rstd[r];
                }
            }
            accumulate(grads, nodes, *gamma, |gg| {
                for i in 0..xv.len() {
                    gg[i % dim] += g[i] * xhat[i];
                }
            });
            accumulate(grads, nodes, *beta, |gb| {
                for i in 0..xv.len() {
                    gb[i % dim] += g[i];
                }
            });
            accumulate(grads, nodes, *input, |gx| {
                for r in 0..rows {
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for c in 0..dim {
                        let gh = g[r * dim + c] * gam[c];
                        mean_g += gh;
                        mean_gx += gh * xhat[r * dim + c];
                    }
                    mean_g /= dim as f64;
                    mean_gx /= dim as f64;
                    for c in 0..dim {
                        let i = r * dim + c;
                        let gh = g[i] * gam[c];
                        gx[i] += rstd[r] * (gh - mean_g - xhat[i] * mean_gx);
                    }
                }
            });
        }
        Op::CausalAttention {
            input,
            scale,
            normalized,
        } => {
            let d = node.value.last_dim();
            accumulate(grads, nodes, *input, |gs| {
                for (row, &norm) in normalized.iter().enumerate() {
                    let i = row % d;
                    let base = row * d;
                    let a = &out[base..base + i];
                    let gr = &g[base..base + i];
                    if norm {
                        let dot: f64 = a.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for j in 0..i {
                            gs[base + j] += a[j] * (gr[j] - dot) / scale;
                        }
                    } else {
                        for j in 0..i {
                            gs[base + j] += a[j] * gr[j] / scale;
                        }
                    }
                }
            });
        }
        Op::Softmax { input, scale } => {
            let d = node.value.last_dim();
            let rows = out.len() / d;
            accumulate(grads, nodes, *input, |gs| {
                for r in 0..rows {
                    let a = &out[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot: f64 = a.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for j in 0..d {
                        gs[r * d + j] += a[j] * (gr[j] - dot) / scale;
                    }
                }
            });
        }
        Op::DiagEmbed(s, theta) => {
            let (sv, tv) = (val(*s), val(*theta));
            let dd = nodes[*theta].value.shape();
            let (d, width) = (dd[0], dd[1]);
            let rows = sv.len();
            accumulate(grads, nodes, *s, |gsv| {
                for r in 0..rows {
                    let j = r % d;
                    let mut acc = 0.0;
                    for c in 0..width {
                        acc += g[r * width + c] * tv[j * width + c];
                    }
                    gsv[r] += acc;
                }
            });
            accumulate(grads, nodes, *theta, |gt| {
                for r in 0..rows {
                    let j = r % d;
                    for c in 0..width {
                        gt[j * width + c] += g[r * width + c] * sv[r];
                    }
                }
            });
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(self.id).clone()
    }

    /// Borrowed view of the value; do not record ops while holding it.
    pub fn data(&self) -> Ref<'t, [f64]> {
        Ref::map(self.tape.value(self.id), |t| t.data())
    }

    pub fn item(&self) -> f64 {
        self.tape.value(self.id).data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = {
            let v = self.tape.value(self.id);
            Tensor::new(v.shape(), v.data().iter().map(|&x| f(x)).collect()).expect("same shape")
        };
        self.tape.record(value, op)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let period = suffix_period(name, a.shape(), b.shape())?;
            let bd = b.data();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % period]))
                .collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.tape.record(value, op))
    }

    /// Elementwise sum; `other` may broadcast over leading dimensions.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&self, c: f64) -> Var<'t> {
        self.unary(Op::MaxConst(self.id, c), |x| x.max(c))
    }

    pub fn reciprocal(&self) -> Var<'t> {
        self.unary(Op::Reciprocal(self.id), |x| 1.0 / x)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn log_sigmoid(&self) -> Var<'t> {
        self.unary(Op::LogSigmoid(self.id), log_sigmoid)
    }

    /// Copy of the value cut off from the graph.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value();
        self.tape.constant(v)
    }

    /// `[..., m, k] x [k, n] -> [..., m, n]` with a shared right operand.
    pub fn matmul(&self, w: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&w);
        let value = {
            let a = self.tape.value(self.id);
            let wv = self.tape.value(w.id);
            let (sa, sw) = (a.shape(), wv.shape());
            if sa.is_empty() || sw.len() != 2 || sa[sa.len() - 1] != sw[0] {
                return Err(AutogradError::ShapeMismatch {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sw.to_vec(),
                });
            }
            let (k, n) = (sw[0], sw[1]);
            let rows = a.numel() / k.max(1);
            let mut out = vec![0.0; rows * n];
            gemm(rows, k, n, 1.0, a.data(), k, 1, wv.data(), n, 1, 0.0, &mut out, n, 1);
            let mut shape = sa.to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::new(&shape, out)?
        };
        Ok(self.tape.record(value, Op::MatMul(self.id, w.id)))
    }

    /// Batched product over matching leading dimensions.
    pub fn bmm(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let (sa, sb) = (a.shape(), b.shape());
            let r = sa.len();
            if r < 2 || sb.len() != r || sa[..r - 2] != sb[..r - 2] || sa[r - 1] != sb[r - 2] {
                return Err(AutogradError::ShapeMismatch {
                    op: "bmm",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
            let batch: usize = sa[..r - 2].iter().product();
            let mut out = vec![0.0; batch * m * n];
            let (ad, bd) = (a.data(), b.data());
            for t in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    1.0,
                    &ad[t * m * k..(t + 1) * m * k],
                    k,
                    1,
                    &bd[t * k * n..(t + 1) * k * n],
                    n,
                    1,
                    0.0,
                    &mut out[t * m * n..(t + 1) * m * n],
                    n,
                    1,
                );
            }
            let mut shape = sa.to_vec();
            shape[r - 1] = n;
            Tensor::new(&shape, out)?
        };
        Ok(self.tape.record(value, Op::BatchMatMul(self.id, other.id)))
    }

    pub fn swap_axes(&self, a0: usize, a1: usize) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value(self.id);
            let r = v.rank();
            if a0 >= r || a1 >= r {
                return Err(AutogradError::InvalidArgument {
                    op: "swap_axes",
                    msg: format!("axes ({a0}, {a1}) out of range for rank {r}"),
                });
            }
            let mut shape = v.shape().to_vec();
            shape.swap(a0, a1);
            Tensor::new(&shape, swap_axes(v.data(), v.shape(), a0, a1))?
        };
        Ok(self.tape.record(value, Op::SwapAxes(self.id, a0, a1)))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(AutogradError::InvalidArgument {
                op: "transpose",
                msg: format!("rank {r} < 2"),
            });
        }
        self.swap_axes(r - 2, r - 1)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshaped(shape)?;
        Ok(self.tape.record(value, Op::Reshape(self.id)))
    }

    /// `x[..., start..start + len]`.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value(self.id);
            let w = v.last_dim();
            if v.rank() == 0 || start + len > w {
                return Err(AutogradError::InvalidArgument {
                    op: "slice",
                    msg: format!("range {start}..{} exceeds width {w}", start + len),
                });
            }
            let rows = v.numel() / w;
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&v.data()[r * w + start..r * w + start + len]);
            }
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            Tensor::new(&shape, out)?
        };
        Ok(self.tape.record(value, Op::Slice { input: self.id, start }))
    }

    pub fn sum(&self) -> Var<'t> {
        let s: f64 = self.tape.value(self.id).data().iter().sum();
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.tape.value(self.id).numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let v = self.tape.value(self.id);
            let shape = v.shape();
            if axis >= shape.len() {
                return Err(AutogradError::InvalidArgument {
                    op: "sum_axis",
                    msg: format!("axis {axis} out of range for {shape:?}"),
                });
            }
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * inner];
            let d = v.data();
            for o in 0..outer {
                for l in 0..len {
                    let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                    for (x, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *x += s;
                    }
                }
            }
            let mut new_shape = shape.to_vec();
            new_shape.remove(axis);
            Tensor::new(&new_shape, out)?
        };
        Ok(self.tape.record(value, Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let len = *self.shape().get(axis).ok_or(AutogradError::InvalidArgument {
            op: "mean_axis",
            msg: format!("axis {axis} out of range"),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (value, rstd) = {
            let x = self.tape.value(self.id);
            let gv = self.tape.value(gamma.id);
            let bv = self.tape.value(beta.id);
            let dim = x.last_dim();
            if gv.shape() != [dim] || bv.shape() != [dim] {
                return Err(AutogradError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: x.shape().to_vec(),
                    rhs: gv.shape().to_vec(),
                });
            }
            let rows = x.numel() / dim;
            let mut out = vec![0.0; x.numel()];
            let mut rstd = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &x.data()[r * dim..(r + 1) * dim];
                let mean = row.iter().sum::<f64>() / dim as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
                let rs = 1.0 / (var + eps).sqrt();
                for c in 0..dim {
                    out[r * dim + c] = (row[c] - mean) * rs * gv.data()[c] + bv.data()[c];
                }
                rstd.push(rs);
            }
            (Tensor::new(x.shape(), out)?, rstd)
        };
        Ok(self.tape.record(
            value,
            Op::LayerNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
                rstd,
            },
        ))
    }

    /// Causal attention over raw scores `[..., d, d]`.
    ///
    /// Entry `(i, j)` is kept only for `j < i`. Each row is
    /// `exp(s / scale)` divided by its sum when that sum is at least one,
    /// and left unnormalized otherwise, so rows sum to a value in `[0, 1]`.
    pub fn causal_attention(&self, scale: f64) -> Result<Var<'t>> {
        let (value, normalized) = {
            let s = self.tape.value(self.id);
            let shape = s.shape();
            let r = shape.len();
            if r < 2 || shape[r - 1] != shape[r - 2] {
                return Err(AutogradError::InvalidArgument {
                    op: "causal_attention",
                    msg: format!("expected square trailing dims, got {shape:?}"),
                });
            }
            let d = shape[r - 1];
            let rows = s.numel() / d;
            let mut out = vec![0.0; s.numel()];
            let mut normalized = Vec::with_capacity(rows);
            for row in 0..rows {
                let i = row % d;
                let base = row * d;
                let z = &s.data()[base..base + i];
                let dst = &mut out[base..base + i];
                normalized.push(causal_row(z, scale, dst));
            }
            (Tensor::new(shape, out)?, normalized)
        };
        Ok(self.tape.record(
            value,
            Op::CausalAttention {
                input: self.id,
                scale,
                normalized,
            },
        ))
    }

    /// Row softmax of `x / scale` over the last axis.
    pub fn softmax(&self, scale: f64) -> Var<'t> {
        let value = {
            let s = self.tape.value(self.id);
            let d = s.last_dim();
            let mut out = vec![0.0; s.numel()];
            for (src, dst) in s.data().chunks(d).zip(out.chunks_mut(d)) {
                let m = src.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / scale));
                let mut total = 0.0;
                for (o, &x) in dst.iter_mut().zip(src) {
                    *o = (x / scale - m).exp();
                    total += *o;
                }
                dst.iter_mut().for_each(|o| *o /= total);
            }
            Tensor::new(s.shape(), out).expect("same shape")
        };
        self.tape.record(
            value,
            Op::Softmax {
                input: self.id,
                scale,
            },
        )
    }

    /// `[..., d] (.) [d, D] -> [..., d, D]` with `out[.., j, :] = s[.., j] * theta[j, :]`.
    pub fn diag_embed(&self, theta: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&theta);
        let value = {
            let s = self.tape.value(self.id);
            let t = self.tape.value(theta.id);
            let (ss, ts) = (s.shape(), t.shape());
            if ts.len() != 2 || ss.is_empty() || ss[ss.len() - 1] != ts[0] {
                return Err(AutogradError::ShapeMismatch {
                    op: "diag_embed",
                    lhs: ss.to_vec(),
                    rhs: ts.to_vec(),
                });
            }
            let (d, width) = (ts[0], ts[1]);
            let mut out = Vec::with_capacity(s.numel() * width);
            for (r, &sv) in s.data().iter().enumerate() {
                let j = r % d;
                out.extend(t.data()[j * width..(j + 1) * width].iter().map(|tv| sv * tv));
            }
            let mut shape = ss.to_vec();
            shape.push(width);
            Tensor::new(&shape, out)?
        };
        Ok(self.tape.record(value, Op::DiagEmbed(self.id, theta.id)))
    }
}

/// Fills one causal-attention row from the admissible logits `z` (entries
/// `j < i`). Returns whether the row was normalized.
fn causal_row(z: &[f64], scale: f64, dst: &mut [f64]) -> bool {
    if z.is_empty() {
        return false;
    }
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / scale));
    if m >= 0.0 {
        // exp(m) >= 1 so the raw row sum is at least one.
        let mut total = 0.0;
        for (o, &x) in dst.iter_mut().zip(z) {
            *o = (x / scale - m).exp();
            total += *o;
        }
        dst.iter_mut().for_each(|o| *o /= total);
        true
    } else {
        let mut total = 0.0;
        for (o, &x) in dst.iter_mut().zip(z) {
            *o = (x / scale).exp();
            total += *o;
        }
        if total >= 1.0 {
            dst.iter_mut().for_each(|o| *o /= total);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_of_ones() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2, 3], 1.0));
        let b = tape.constant(Tensor::full(&[3, 2], 1.0));
        let c = a.matmul(b).unwrap();
        assert_eq!(c.shape(), vec![2, 2]);
        assert!(c.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        match a.matmul(b) {
            Err(AutogradError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[2, 4], 3.5));
        let g = tape.constant(Tensor::full(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = x.layer_norm(g, b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exp_of_log_is_identity() {
        let tape = Tape::new();
        let data = [0.1, 1.0, 2.5, 7.0, 1e-3];
        let x = tape.constant(t(&[5], &data));
        let y = x.ln().exp();
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn square_sum_gradient() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let loss = w.mul(w).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn detached_branch_gets_no_gradient() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let frozen = w.detach();
        let loss = w.add(frozen.scale(3.0)).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0, 1.0]);
        assert!(g.get(frozen).is_none());
        assert!(!frozen.requires_grad());
    }

    #[test]
    fn opaque_op_blocks_backward() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let o = tape.opaque("argsort", &[w], t(&[2], &[1.0, 0.0]));
        let loss = o.sum();
        assert_eq!(
            tape.backward(loss).unwrap_err(),
            AutogradError::Unsupported("argsort".into())
        );
    }

    #[test]
    fn backward_needs_scalar() {
        let tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(
            tape.backward(w.scale(2.0)),
            Err(AutogradError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn causal_attention_first_row_is_zero_and_rows_are_substochastic() {
        let tape = Tape::new();
        let s = tape.constant(Tensor::zeros(&[3, 3]));
        let a = s.causal_attention(1.0).unwrap();
        let a = a.data();
        assert_eq!(&a[0..3], &[0.0, 0.0, 0.0]);
        // one admissible logit of 0: exp(0) = 1, sum 1 >= 1
        assert_eq!(&a[3..6], &[1.0, 0.0, 0.0]);
        assert_eq!(&a[6..9], &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn causal_attention_keeps_small_rows_unnormalized() {
        let tape = Tape::new();
        let scale = 4.0;
        let s = tape.constant(Tensor::full(&[3, 3], -20.0 * scale));
        let a = s.causal_attention(scale).unwrap();
        let a = a.data();
        let e = (-20.0f64).exp();
        assert_eq!(a[3], e);
        assert_eq!(a[6], e);
        assert_eq!(a[7], e);
        assert_eq!(a[8], 0.0);
    }

    #[test]
    fn swap_axes_roundtrip() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let y = x.swap_axes(0, 1).unwrap();
        assert_eq!(y.shape(), vec![3, 2, 4]);
        // y[1][0][2] == x[0][1][2]
        assert_eq!(y.data()[(1 * 2) * 4 + 2], data[(0 * 3 + 1) * 4 + 2]);
        let z = y.swap_axes(0, 1).unwrap();
        assert_eq!(&*z.data(), &data[..]);
    }

    #[test]
    fn leading_broadcast_add() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let y = x.add(b).unwrap();
        assert_eq!(&*y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let bad = tape.constant(Tensor::zeros(&[2]));
        assert!(x.add(bad).is_err());
    }
}

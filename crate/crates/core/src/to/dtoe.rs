use fpscm_autograd::{Tape, Tensor, Var};
use rand::seq::SliceRandom;

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::rng::rng_for;
use crate::scm::Dag;
use crate::to::encoder::{ToEncoderGraph, ToEncoderParams};
use crate::to::ops::{argmax, bn_loss, leaves, pick_target, reduce_dataset, reduce_graph};

/// Leaf logits recorded on a tape.
pub trait LeafModel<'t> {
    /// `[d]` logits for the remaining columns of `x`; `nodes` holds their
    /// labels in the full dataset.
    fn logits(&self, x: &Matrix, nodes: &[usize]) -> Result<Var<'t>>;
}

/// Leaf logits as plain values.
pub trait LeafScorer: Sync {
    fn leaf_logits(&self, x: &Matrix, nodes: &[usize]) -> Result<Vec<f64>>;
}

impl<'t> LeafModel<'t> for ToEncoderGraph<'_, 't> {
    fn logits(&self, x: &Matrix, _nodes: &[usize]) -> Result<Var<'t>> {
        ToEncoderGraph::logits(self, x)
    }
}

impl LeafScorer for ToEncoderParams {
    fn leaf_logits(&self, x: &Matrix, _nodes: &[usize]) -> Result<Vec<f64>> {
        self.logits(x)
    }
}

/// Knows the true graph: `+margin` on leaves of the remaining subgraph,
/// `−margin` elsewhere.
#[derive(Clone, Debug)]
pub struct OracleScorer {
    pub dag: Dag,
    pub margin: f64,
}

impl OracleScorer {
    pub fn new(dag: Dag) -> Self {
        Self { dag, margin: 40.0 }
    }

    /// Same magnitudes with the signs flipped.
    pub fn anti(dag: Dag) -> Self {
        Self { dag, margin: -40.0 }
    }
}

impl LeafScorer for OracleScorer {
    fn leaf_logits(&self, _x: &Matrix, nodes: &[usize]) -> Result<Vec<f64>> {
        if nodes.iter().any(|&k| k >= self.dag.d()) {
            return Err(CoreError::arg("node label outside the oracle graph"));
        }
        Ok(leaves(&self.dag.induced(nodes))
            .into_iter()
            .map(|b| if b { self.margin } else { -self.margin })
            .collect())
    }
}

/// Places a scorer's values on a tape as constants.
pub struct Constant<'a, 't, S: ?Sized> {
    pub scorer: &'a S,
    pub tape: &'t Tape,
}

impl<'t, S: LeafScorer + ?Sized> LeafModel<'t> for Constant<'_, 't, S> {
    fn logits(&self, x: &Matrix, nodes: &[usize]) -> Result<Var<'t>> {
        Ok(self.tape.constant(Tensor::from_vec(self.scorer.leaf_logits(x, nodes)?)))
    }
}

/// Sum of leaf-classification losses along a sequential peeling of the
/// graph, kept only at `d_max` sampled steps. The predicted and removed
/// leaves carry no gradient.
pub fn d_toe<'t, M: LeafModel<'t>>(model: &M, tape: &'t Tape, x: &Matrix, g: &Dag, d_max: usize, seed: u64) -> Result<Var<'t>> {
    let d = g.d();
    if x.cols() != d {
        return Err(CoreError::arg(format!("dataset has {} columns, graph {d} nodes", x.cols())));
    }
    if d_max == 0 || d_max > d {
        return Err(CoreError::arg(format!("d_max {d_max} outside 1..={d}")));
    }
    let mut steps: Vec<usize> = (0..d).collect();
    steps.shuffle(&mut rng_for(seed, &[0x5ab]));
    let mut sampled = vec![false; d];
    for &q in &steps[..d_max] {
        sampled[q] = true;
    }
    let mut loss = tape.constant(Tensor::scalar(0.0));
    let (mut x, mut g) = (x.clone(), g.clone());
    let mut nodes: Vec<usize> = (0..d).collect();
    for (q, &keep) in sampled.iter().enumerate() {
        let y = leaves(&g);
        let p = model.logits(&x, &nodes)?;
        if keep {
            loss = loss.add(bn_loss(p, &y)?)?;
        }
        let q_hat = argmax(&p.data());
        let l = pick_target(&y, q_hat, &mut rng_for(seed, &[0xb, q as u64]))?;
        x = reduce_dataset(&x, l)?;
        g = reduce_graph(&g, l)?;
        nodes.remove(l);
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, d: usize) -> Matrix {
        Matrix::new(n, d, (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn oracle_on_chain_is_near_zero() {
        let g = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let tape = Tape::new();
        let oracle = OracleScorer::new(g.clone());
        let l = d_toe(&Constant { scorer: &oracle, tape: &tape }, &tape, &data(5, 3), &g, 3, 1).unwrap();
        assert!(l.item() <= 3.0 * 1e-10);
    }

    #[test]
    fn anti_oracle_is_penalized() {
        let g = Dag::from_edges(4, &[(0, 1), (1, 2), (0, 3)]).unwrap();
        let tape = Tape::new();
        let anti = OracleScorer::anti(g.clone());
        let l = d_toe(&Constant { scorer: &anti, tape: &tape }, &tape, &data(5, 4), &g, 2, 9).unwrap();
        assert!(l.item() > 2.0);
    }

    #[test]
    fn seeded_loss_is_repeatable() {
        let g = Dag::from_edges(3, &[(0, 2), (1, 2)]).unwrap();
        let params = ToEncoderParams::init(&Default::default(), 2).unwrap();
        let eval = || {
            let tape = Tape::new();
            let vars = params.store().bind(&tape);
            d_toe(&params.on_tape(&vars), &tape, &data(6, 3), &g, 3, 4).unwrap().item()
        };
        assert_eq!(eval(), eval());
    }

    #[test]
    fn rejects_bad_budget() {
        let g = Dag::empty(2);
        let tape = Tape::new();
        let oracle = OracleScorer::new(g.clone());
        let m = Constant { scorer: &oracle, tape: &tape };
        assert!(d_toe(&m, &tape, &data(3, 2), &g, 0, 0).is_err());
        assert!(d_toe(&m, &tape, &data(3, 2), &g, 3, 0).is_err());
    }
}

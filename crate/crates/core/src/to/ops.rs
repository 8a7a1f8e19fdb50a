use fpscm_autograd::{Tensor, Var};
use rand::Rng;

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::scm::Dag;

/// Indicator of nodes without outgoing edges.
pub fn leaves(g: &Dag) -> Vec<bool> {
    g.leaves()
}

pub fn reduce_dataset(x: &Matrix, q: usize) -> Result<Matrix> {
    if q >= x.cols() {
        return Err(CoreError::arg(format!("column {q} out of range for {} columns", x.cols())));
    }
    Ok(x.remove_column(q))
}

pub fn reduce_graph(g: &Dag, q: usize) -> Result<Dag> {
    if q >= g.d() {
        return Err(CoreError::arg(format!("node {q} out of range for {} nodes", g.d())));
    }
    Ok(g.remove_node(q))
}

/// `q_hat` when it is a true leaf, otherwise a uniform draw among the leaves.
pub fn pick_target<R: Rng + ?Sized>(y: &[bool], q_hat: usize, rng: &mut R) -> Result<usize> {
    if y.get(q_hat).copied().unwrap_or(false) {
        return Ok(q_hat);
    }
    let ones: Vec<usize> = (0..y.len()).filter(|&k| y[k]).collect();
    if ones.is_empty() {
        return Err(CoreError::Invariant("leaf indicator has no leaf".into()));
    }
    Ok(ones[rng.gen_range(0..ones.len())])
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

fn signs(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect()
}

/// `−Σ log σ(s_k p_k)` with `s_k = ±1` from `y`.
pub fn bn_loss<'t>(p: Var<'t>, y: &[bool]) -> Result<Var<'t>> {
    if p.shape() != [y.len()] {
        return Err(CoreError::arg(format!("logits of shape {:?} for {} labels", p.shape(), y.len())));
    }
    let s = p.tape().constant(Tensor::from_vec(signs(y)));
    Ok(p.mul(s)?.log_sigmoid().sum().neg())
}

pub fn bn_loss_value(p: &[f64], y: &[bool]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(CoreError::arg(format!("{} logits for {} labels", p.len(), y.len())));
    }
    Ok(p.iter().zip(signs(y)).map(|(&v, s)| softplus(-s * v)).sum())
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use fpscm_autograd::Tape;

    fn chain3() -> Dag {
        Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn chain_leaves_and_reduction() {
        let g = chain3();
        assert_eq!(leaves(&g), vec![false, false, true]);
        assert_eq!(reduce_graph(&g, 2).unwrap(), Dag::from_edges(2, &[(0, 1)]).unwrap());
    }

    #[test]
    fn pick_target_follows_definition() {
        let y = [false, true, true];
        for s in 0..20 {
            let t = pick_target(&y, 0, &mut rng_for(s, &[])).unwrap();
            assert!(t == 1 || t == 2);
            assert_eq!(pick_target(&y, 1, &mut rng_for(s, &[])).unwrap(), 1);
        }
        assert!(matches!(
            pick_target(&[false, false], 0, &mut rng_for(0, &[])),
            Err(CoreError::Invariant(_))
        ));
    }

    #[test]
    fn bn_loss_reference_values() {
        let v = bn_loss_value(&[0.0; 3], &[true, false, true]).unwrap();
        assert!((v - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bn_loss_value(&[40.0], &[true]).unwrap() < 1e-15);
        let tape = Tape::new();
        let p = tape.param(Tensor::from_vec(vec![0.3, -1.2, 2.5]));
        let y = [true, false, false];
        let l = bn_loss(p, &y).unwrap();
        assert!((l.item() - bn_loss_value(&[0.3, -1.2, 2.5], &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn argmax_prefers_smallest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0; 4]), 0);
    }
}

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::scm::Permutation;
use crate::to::dtoe::LeafScorer;
use crate::to::ops::{argmax, reduce_dataset};

/// Repeatedly removes the highest-scoring leaf; the removal sequence
/// reversed is a parents-first ordering.
pub fn infer_to<S: LeafScorer + ?Sized>(scorer: &S, x: &Matrix) -> Result<Permutation> {
    let d = x.cols();
    let mut nodes: Vec<usize> = (0..d).collect();
    let mut x = x.clone();
    let mut removed = Vec::with_capacity(d);
    while nodes.len() > 1 {
        let l = argmax(&scorer.leaf_logits(&x, &nodes)?);
        removed.push(nodes.remove(l));
        x = reduce_dataset(&x, l)?;
    }
    removed.extend(nodes);
    removed.reverse();
    Permutation::new(removed)
}

/// Index with the most votes; the smallest index wins ties.
pub fn majority(votes: &[usize], d: usize) -> usize {
    let mut counts = vec![0usize; d];
    for &v in votes {
        counts[v] += 1;
    }
    argmax(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
}

/// Splits the rows into `n / n_train` consecutive chunks and removes, at
/// each step, the leaf most chunks agree on. Leftover rows are unused.
pub fn infer_to_voting<S: LeafScorer + ?Sized>(scorer: &S, x: &Matrix, n_train: usize) -> Result<Permutation> {
    if n_train == 0 || x.rows() < n_train {
        return Err(CoreError::arg(format!(
            "{} rows cannot be split into chunks of {n_train}",
            x.rows()
        )));
    }
    let d = x.cols();
    let mut chunks: Vec<Matrix> = (0..x.rows() / n_train)
        .map(|b| x.row_range(b * n_train, (b + 1) * n_train))
        .collect();
    let mut nodes: Vec<usize> = (0..d).collect();
    let mut removed = Vec::with_capacity(d);
    while nodes.len() > 1 {
        let votes = chunks
            .iter()
            .map(|c| Ok(argmax(&scorer.leaf_logits(c, &nodes)?)))
            .collect::<Result<Vec<_>>>()?;
        let l = majority(&votes, nodes.len());
        removed.push(nodes.remove(l));
        for c in &mut chunks {
            *c = reduce_dataset(c, l)?;
        }
    }
    removed.extend(nodes);
    removed.reverse();
    Permutation::new(removed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tos;
    use crate::scm::Dag;
    use crate::to::dtoe::OracleScorer;

    struct Flat;

    impl LeafScorer for Flat {
        fn leaf_logits(&self, x: &Matrix, _nodes: &[usize]) -> Result<Vec<f64>> {
            Ok(vec![0.0; x.cols()])
        }
    }

    fn data(n: usize, d: usize) -> Matrix {
        Matrix::new(n, d, (0..n * d).map(|i| (i as f64).cos()).collect()).unwrap()
    }

    #[test]
    fn oracle_recovers_valid_order() {
        let g = Dag::from_edges(4, &[(2, 0), (0, 3), (2, 1)]).unwrap();
        let p = infer_to(&OracleScorer::new(g.clone()), &data(3, 4)).unwrap();
        assert!(p.is_topological_order(&g));
        assert_eq!(tos(&p, &g).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_still_give_a_permutation() {
        let p = infer_to(&Flat, &data(3, 5)).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(infer_to(&Flat, &data(3, 1)).unwrap(), Permutation::identity(1));
    }

    #[test]
    fn single_chunk_voting_matches_plain() {
        let g = Dag::from_edges(3, &[(1, 0), (0, 2)]).unwrap();
        let o = OracleScorer::new(g);
        assert_eq!(infer_to_voting(&o, &data(4, 3), 4).unwrap(), infer_to(&o, &data(4, 3)).unwrap());
        assert!(infer_to_voting(&o, &data(3, 3), 4).is_err());
    }

    #[test]
    fn majority_and_tie_break() {
        assert_eq!(majority(&[2, 2, 1], 3), 2);
        assert_eq!(majority(&[2, 1], 3), 1);
    }
}

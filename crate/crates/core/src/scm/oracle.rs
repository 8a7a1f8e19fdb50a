//! Least-squares recovery of additive-noise mechanisms under a known
//! ordering: each node is regressed (with intercept) on every node placed
//! before it.

use nalgebra::{DMatrix, DVector};

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::scm::Permutation;

#[derive(Clone, Debug, PartialEq)]
pub struct OlsFit {
    /// `coef[parent][child]` in original labels; zero for nodes ordered
    /// after the child.
    pub coef: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
    /// Mean squared residual per node.
    pub residual_var: Vec<f64>,
}

pub fn ols_on_predecessors(x: &Matrix, perm: &Permutation) -> Result<OlsFit> {
    let (n, d) = (x.rows(), x.cols());
    if perm.len() != d {
        return Err(CoreError::arg("permutation length differs from data"));
    }
    let mut coef = vec![vec![0.0; d]; d];
    let mut intercept = vec![0.0; d];
    let mut residual_var = vec![0.0; d];
    for k in 0..d {
        let child = perm.map()[k];
        let preds = &perm.map()[..k];
        if n <= k + 1 {
            return Err(CoreError::arg(format!(
                "{n} rows cannot fit {} coefficients",
                k + 1
            )));
        }
        let z = DMatrix::from_fn(
            n,
            k + 1,
            |r, c| if c == 0 { 1.0 } else { x.get(r, preds[c - 1]) },
        );
        let y = DVector::from_fn(n, |r, _| x.get(r, child));
        let gram = z.transpose() * &z;
        let rhs = z.transpose() * &y;
        let beta = gram
            .cholesky()
            .ok_or_else(|| CoreError::Numeric {
                context: "singular design matrix in least squares".into(),
                index: k,
            })?
            .solve(&rhs);
        intercept[child] = beta[0];
        for (c, &p) in preds.iter().enumerate() {
            coef[p][child] = beta[c + 1];
        }
        let resid = &y - &z * &beta;
        residual_var[child] = resid.norm_squared() / n as f64;
    }
    Ok(OlsFit {
        coef,
        intercept,
        residual_var,
    })
}

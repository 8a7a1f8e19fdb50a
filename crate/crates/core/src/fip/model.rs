use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Open01};
use rayon::prelude::*;

use crate::data::{Dataset, Matrix, Standardization};
use crate::error::{CoreError, Result};
use crate::fip::train::{from_ordered, to_ordered};
use crate::fip::FipParams;
use crate::metrics::CounterfactualPredictor;
use crate::rng::rng_for;
use crate::scm::{Dag, EmpiricalQuantile, FixedPointScm, InterventionMap, Jacobians, NoiseDist, NoiseModel, Permutation, StructuredFn};

/// Trained transformer together with the ordering and standardization it
/// was fitted under.
#[derive(Clone, Debug, PartialEq)]
pub struct FipModel {
    params: FipParams,
    perm: Permutation,
    standardization: Standardization,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEstimate {
    pub dag: Dag,
    /// `scores[parent][child]`: mean absolute Jacobian entry, original labels.
    pub scores: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Samples in original units.
    pub x: Matrix,
    pub x_standardized: Matrix,
    /// Noise draws in standardized units, original labels.
    pub noise: Matrix,
}

impl FipModel {
    pub fn new(params: FipParams, perm: Permutation, standardization: Standardization) -> Result<Self> {
        let d = params.d();
        if perm.len() != d || standardization.dim() != d {
            return Err(CoreError::arg(format!(
                "model has {d} nodes, ordering {}, standardization {}",
                perm.len(),
                standardization.dim()
            )));
        }
        Ok(Self {
            params,
            perm,
            standardization,
        })
    }

    pub fn params(&self) -> &FipParams {
        &self.params
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn d(&self) -> usize {
        self.params.d()
    }

    /// Observations of `ds` standardized with this model's record.
    pub fn standardize(&self, ds: &Dataset) -> Result<Matrix> {
        if ds.d() != self.d() {
            return Err(CoreError::arg(format!("dataset has {} columns, model {}", ds.d(), self.d())));
        }
        Ok(self.standardization.apply(&ds.raw_x()))
    }

    /// `X − Pᵀ T(P X, 0)` on standardized data, original labels.
    pub fn residuals_standardized(&self, x_std: &Matrix) -> Result<Matrix> {
        let y = to_ordered(x_std, &self.perm);
        let t = self.params.t_anm_batch(&y)?;
        let r: Vec<f64> = y.data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
        Ok(from_ordered(&Matrix::new(y.rows(), y.cols(), r)?, &self.perm))
    }

    /// Mean absolute Jacobian of `Pᵀ T(P X, 0)` over at most `max_rows`
    /// rows of `ds`, thresholded at `tau`.
    pub fn extract_graph(&self, ds: &Dataset, tau: f64, max_rows: Option<usize>) -> Result<GraphEstimate> {
        let x = self.standardize(ds)?;
        let rows = max_rows.map_or(x.rows(), |m| m.min(x.rows()));
        let y = to_ordered(&x.row_range(0, rows), &self.perm);
        let d = self.d();
        let mut mean = DMatrix::<f64>::zeros(d, d);
        for j in self.params.anm_jacobians(&y)? {
            mean += j.abs();
        }
        mean /= rows.max(1) as f64;
        let map = self.perm.map();
        let mut scores = vec![vec![0.0; d]; d];
        let mut edges = Vec::new();
        for i in 0..d {
            for k in 0..d {
                scores[map[k]][map[i]] = mean[(i, k)];
                if k < i && mean[(i, k)] > tau {
                    edges.push((map[k], map[i]));
                }
            }
        }
        Ok(GraphEstimate {
            dag: Dag::from_edges(d, &edges)?,
            scores,
        })
    }

    /// Empirical quantile function of each node's residuals.
    pub fn estimate_noise_quantiles(&self, ds: &Dataset) -> Result<NoiseModel> {
        if ds.n() == 0 {
            return Err(CoreError::arg("no residuals to estimate quantiles from"));
        }
        let r = self.residuals_standardized(&self.standardize(ds)?)?;
        let dists = (0..self.d())
            .map(|j| EmpiricalQuantile::new(r.column(j)).map(NoiseDist::Empirical))
            .collect::<Result<Vec<_>>>()?;
        NoiseModel::new(dists)
    }

    /// `d` applications of `y ↦ T_int(T(y, 0) + m)` from zero, row-wise in
    /// ordered space.
    pub fn solve_ordered(&self, m: &Matrix, t: Option<&InterventionMap>) -> Result<Matrix> {
        let d = self.d();
        let mut y = Matrix::zeros(m.rows(), d);
        for it in 0..d {
            let mut next = self.params.t_anm_batch(&y)?;
            for (v, mv) in next.data_mut().iter_mut().zip(m.data()) {
                *v += mv;
            }
            if let Some(t) = t {
                for r in 0..next.rows() {
                    let row = t.apply(next.row(r));
                    next.row_mut(r).copy_from_slice(&row);
                }
            }
            if let Some((row, _)) = next.first_non_finite() {
                return Err(CoreError::Numeric {
                    context: format!("generation iteration {it}"),
                    index: row,
                });
            }
            y = next;
        }
        Ok(y)
    }

    /// Pushes uniform draws through `noise` and solves the fixed point.
    pub fn generate(&self, noise: &NoiseModel, n_samples: usize, seed: u64) -> Result<Generated> {
        let d = self.d();
        if noise.d() != d {
            return Err(CoreError::arg("noise model dimension differs from the model"));
        }
        let rows: Vec<Vec<f64>> = (0..n_samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_for(seed, &[r as u64]);
                let u: Vec<f64> = (0..d).map(|_| Open01.sample(&mut rng)).collect();
                noise.quantiles(&u)
            })
            .collect();
        let noise_m = Matrix::new(n_samples, d, rows.concat())?;
        let y = self.solve_ordered(&to_ordered(&noise_m, &self.perm), None)?;
        let x_std = from_ordered(&y, &self.perm);
        Ok(Generated {
            x: self.standardization.invert(&x_std),
            x_standardized: x_std,
            noise: noise_m,
        })
    }

    /// Abducts `m = y − T(y, 0)` and re-solves under `t` (ordered,
    /// standardized space); inputs and outputs are standardized with
    /// original labels.
    pub fn counterfactual_standardized(&self, x_std: &Matrix, t: &InterventionMap) -> Result<Matrix> {
        t.validate(self.d())?;
        let y = to_ordered(x_std, &self.perm);
        let h = self.params.t_anm_batch(&y)?;
        let m: Vec<f64> = y.data().iter().zip(h.data()).map(|(a, b)| a - b).collect();
        let cf = self.solve_ordered(&Matrix::new(y.rows(), y.cols(), m)?, Some(t))?;
        Ok(from_ordered(&cf, &self.perm))
    }

    /// Counterfactual of one factual in original units.
    pub fn predict_counterfactual(&self, x_factual: &[f64], t: &InterventionMap) -> Result<Vec<f64>> {
        let z = Matrix::new(1, self.d(), self.standardization.apply_row(x_factual))?;
        let cf = self.counterfactual_standardized(&z, t)?;
        Ok(self.standardization.invert_row(cf.row(0)))
    }

    /// The learned SCM `X = Pᵀ (T(P X, 0) + P N)` in standardized units.
    pub fn anm_scm(&self, noise: NoiseModel) -> Result<FixedPointScm> {
        FixedPointScm::new(self.perm.clone(), Arc::new(FipAnm::new(self.params.clone())), noise)
    }
}

impl CounterfactualPredictor for FipModel {
    fn predict_do(&self, x_factual: &[f64], node: usize, value: f64) -> Result<Vec<f64>> {
        let x = Matrix::new(1, self.d(), x_factual.to_vec())?;
        Ok(self.predict_do_batch(&x, node, value)?.into_data())
    }

    fn predict_do_batch(&self, x_factual: &Matrix, node: usize, value: f64) -> Result<Matrix> {
        if node >= self.d() {
            return Err(CoreError::arg(format!("node {node} out of range")));
        }
        let s = &self.standardization;
        let t = InterventionMap::DoNode {
            index: self.perm.position(node),
            value: (value - s.mean[node]) / s.std[node],
        };
        let cf = self.counterfactual_standardized(&s.apply(x_factual), &t)?;
        Ok(s.invert(&cf))
    }
}

/// `H(x, n) = T(x, 0) + n` as a structured map.
#[derive(Clone, Debug)]
pub struct FipAnm {
    params: Arc<FipParams>,
}

impl FipAnm {
    pub fn new(params: FipParams) -> Self {
        Self { params: Arc::new(params) }
    }
}

impl StructuredFn for FipAnm {
    fn dim(&self) -> usize {
        self.params.d()
    }

    fn eval(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
        Ok(self.params.t_anm(x)?.iter().zip(n).map(|(a, b)| a + b).collect())
    }

    fn eval_batch(&self, x: &Matrix, n: &Matrix) -> Result<Matrix> {
        let mut t = self.params.t_anm_batch(x)?;
        for (a, b) in t.data_mut().iter_mut().zip(n.data()) {
            *a += b;
        }
        Ok(t)
    }

    fn analytic_jacobians(&self, x: &[f64], _n: &[f64]) -> Result<Option<Jacobians>> {
        let d = self.dim();
        let jac_x = self.params.anm_jacobians(&Matrix::new(1, d, x.to_vec())?)?.remove(0);
        Ok(Some(Jacobians {
            jac_x,
            jac_n: DMatrix::identity(d, d),
            analytic: true,
        }))
    }

    fn abduct_noise(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(y.iter().zip(self.params.t_anm(y)?).map(|(a, b)| a - b).collect())
    }
}

/// The full map `T(x, n)`.
#[derive(Clone, Debug)]
pub struct FipMap {
    params: Arc<FipParams>,
}

impl FipMap {
    pub fn new(params: FipParams) -> Self {
        Self { params: Arc::new(params) }
    }
}

impl StructuredFn for FipMap {
    fn dim(&self) -> usize {
        self.params.d()
    }

    fn eval(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
        self.params.t_forward(x, n)
    }

    fn eval_batch(&self, x: &Matrix, n: &Matrix) -> Result<Matrix> {
        self.params.t_batch(x, Some(n))
    }
}

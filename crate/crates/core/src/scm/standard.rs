use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::rng::rng_for;
use crate::scm::structured::StructuredFn;
use crate::scm::{Dag, FixedPointScm, NoiseModel, Permutation};

/// Per-node mechanism `F_i(parents, n_i)`; parents arrive in increasing
/// index order.
pub trait Mechanism: Send + Sync + fmt::Debug {
    fn eval(&self, parents: &[f64], noise: f64) -> f64;

    /// Noise value reproducing `value` given the parents, when invertible.
    fn noise_inverse(&self, _parents: &[f64], _value: f64) -> Option<f64> {
        None
    }

    /// Expected number of parents, when fixed by the mechanism's parameters.
    fn arity(&self) -> Option<usize> {
        None
    }
}

/// `F(pa, n) = ⟨w, pa⟩ + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMechanism {
    pub weights: Vec<f64>,
}

impl Mechanism for LinearMechanism {
    fn eval(&self, parents: &[f64], noise: f64) -> f64 {
        self.weights
            .iter()
            .zip(parents)
            .map(|(w, p)| w * p)
            .sum::<f64>()
            + noise
    }

    fn noise_inverse(&self, parents: &[f64], value: f64) -> Option<f64> {
        Some(value - self.eval(parents, 0.0))
    }

    fn arity(&self) -> Option<usize> {
        Some(self.weights.len())
    }
}

#[derive(Clone, Debug)]
pub struct StandardScm {
    dag: Dag,
    mechanisms: Vec<Arc<dyn Mechanism>>,
    noise: NoiseModel,
    order: Vec<usize>,
}

impl StandardScm {
    pub fn new(dag: Dag, mechanisms: Vec<Arc<dyn Mechanism>>, noise: NoiseModel) -> Result<Self> {
        let d = dag.d();
        if mechanisms.len() != d || noise.d() != d {
            return Err(CoreError::arg(format!(
                "{d} nodes but {} mechanisms and {} noise terms",
                mechanisms.len(),
                noise.d()
            )));
        }
        for (i, m) in mechanisms.iter().enumerate() {
            let k = dag.parents(i).len();
            if let Some(a) = m.arity() {
                if a != k {
                    return Err(CoreError::arg(format!(
                        "mechanism {i} takes {a} inputs, node has {k} parents"
                    )));
                }
            }
        }
        let order = dag.topological_order();
        Ok(Self {
            dag,
            mechanisms,
            noise,
            order,
        })
    }

    pub fn d(&self) -> usize {
        self.dag.d()
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn mechanisms(&self) -> &[Arc<dyn Mechanism>] {
        &self.mechanisms
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Ancestral evaluation of all nodes for one noise vector.
    pub fn sample_with_noise(&self, n: &[f64]) -> Result<Vec<f64>> {
        if n.len() != self.d() {
            return Err(CoreError::arg(format!(
                "noise has length {}, expected {}",
                n.len(),
                self.d()
            )));
        }
        let mut x = vec![0.0; self.d()];
        for &i in &self.order {
            let pa: Vec<f64> = self.dag.parents(i).iter().map(|&p| x[p]).collect();
            x[i] = self.mechanisms[i].eval(&pa, n[i]);
            if !x[i].is_finite() {
                return Err(CoreError::Numeric {
                    context: format!("mechanism of node {i}"),
                    index: i,
                });
            }
        }
        Ok(x)
    }

    pub fn sample_given_noise(&self, noise: &Matrix) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..noise.rows())
            .into_par_iter()
            .map(|r| self.sample_with_noise(noise.row(r)))
            .collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    }

    /// `(X, N)` with the same per-row streams as [`FixedPointScm::sample`].
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<(Matrix, Matrix)> {
        let noise: Vec<Vec<f64>> = (0..n_samples)
            .map(|r| self.noise.sample(&mut rng_for(seed, &[r as u64])))
            .collect();
        let noise = Matrix::from_rows(&noise)?;
        Ok((self.sample_given_noise(&noise)?, noise))
    }
}

/// Reparameterized map `H(y, m)_k = F_{map[k]}(parents from y, m_k)`.
#[derive(Clone, Debug)]
struct ReparamFn {
    scm: StandardScm,
    perm: Permutation,
    /// Ordered positions of each ordered node's parents, by increasing
    /// original parent index.
    parent_pos: Vec<Vec<usize>>,
}

impl ReparamFn {
    fn parents_of(&self, k: usize, y: &[f64]) -> Vec<f64> {
        self.parent_pos[k].iter().map(|&p| y[p]).collect()
    }
}

impl StructuredFn for ReparamFn {
    fn dim(&self) -> usize {
        self.perm.len()
    }

    fn eval(&self, y: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.dim())
            .map(|k| self.scm.mechanisms[self.perm.map()[k]].eval(&self.parents_of(k, y), m[k]))
            .collect())
    }

    fn abduct_noise(&self, y: &[f64]) -> Result<Vec<f64>> {
        (0..self.dim())
            .map(|k| {
                let node = self.perm.map()[k];
                self.scm.mechanisms[node]
                    .noise_inverse(&self.parents_of(k, y), y[k])
                    .ok_or_else(|| {
                        CoreError::Capability(format!(
                            "mechanism of node {node} is not invertible in its noise"
                        ))
                    })
            })
            .collect()
    }
}

/// Fixed-point form of `scm` under a topological ordering `perm`.
pub fn reparameterize_standard(scm: &StandardScm, perm: &Permutation) -> Result<FixedPointScm> {
    perm.check_topological(scm.dag())?;
    let parent_pos = perm
        .map()
        .iter()
        .map(|&node| {
            scm.dag
                .parents(node)
                .iter()
                .map(|&p| perm.position(p))
                .collect()
        })
        .collect();
    let h = ReparamFn {
        scm: scm.clone(),
        perm: perm.clone(),
        parent_pos,
    };
    FixedPointScm::new(perm.clone(), Arc::new(h), scm.noise.clone())
}

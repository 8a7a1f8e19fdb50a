use std::sync::Arc;

use rayon::prelude::*;

use crate::data::{Dataset, Matrix};
use crate::error::{CoreError, Result};
use crate::rng::rng_for;
use crate::scm::structured::{
    check_mask, gaussian_probes, jacobians, MaskLevel, MaskTolerance, StructuredFn,
};
use crate::scm::{Dag, NoiseModel, Permutation};

/// Number of Gaussian probes used by the construction-time mask check.
const CONSTRUCTION_PROBES: usize = 8;

/// `X = Pᵀ H(P X, P N)` with `H` triangular in `x` and diagonal in `n`.
#[derive(Clone, Debug)]
pub struct FixedPointScm {
    perm: Permutation,
    h: Arc<dyn StructuredFn>,
    noise: NoiseModel,
}

impl FixedPointScm {
    pub fn new(perm: Permutation, h: Arc<dyn StructuredFn>, noise: NoiseModel) -> Result<Self> {
        Self::with_level(perm, h, noise, MaskLevel::Full)
    }

    pub(crate) fn with_level(
        perm: Permutation,
        h: Arc<dyn StructuredFn>,
        noise: NoiseModel,
        level: MaskLevel,
    ) -> Result<Self> {
        let d = perm.len();
        if h.dim() != d || noise.d() != d {
            return Err(CoreError::arg(format!(
                "permutation has {d} nodes, map {}, noise {}",
                h.dim(),
                noise.d()
            )));
        }
        check_mask(
            h.as_ref(),
            &gaussian_probes(d, CONSTRUCTION_PROBES, 0x5eed),
            level,
            MaskTolerance::default(),
        )?;
        Ok(Self { perm, h, noise })
    }

    pub fn d(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    pub fn h(&self) -> &Arc<dyn StructuredFn> {
        &self.h
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        if noise.d() != self.d() {
            return Err(CoreError::arg("noise model dimension differs"));
        }
        Ok(Self {
            noise,
            ..self.clone()
        })
    }

    /// `d` applications of `H(·, m)` in ordered space, starting from `start`.
    pub fn iterate_ordered(&self, m: &[f64], start: &[f64]) -> Result<Vec<f64>> {
        iterate(self.h.as_ref(), m, start)
    }

    /// `‖x − Pᵀ H(P x, P n)‖∞`.
    pub fn residual(&self, x: &[f64], n: &[f64]) -> Result<f64> {
        let hx = self.h.eval(&self.perm.apply(x), &self.perm.apply(n))?;
        Ok(self
            .perm
            .apply_transpose(&hx)
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Draws noise and solves each row; returns `(X, N)` in original order.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<(Matrix, Matrix)> {
        if n_samples == 0 {
            return Err(CoreError::arg("n_samples must be at least 1"));
        }
        let d = self.d();
        let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples)
            .into_par_iter()
            .map(|r| {
                let mut rng = rng_for(seed, &[r as u64]);
                let n = self.noise.sample(&mut rng);
                let x = solve_fixed_point(self, &n).map_err(|e| row_error(e, r))?;
                Ok((x, n))
            })
            .collect::<Result<_>>()?;
        let mut x = Vec::with_capacity(n_samples * d);
        let mut n = Vec::with_capacity(n_samples * d);
        for (xr, nr) in rows {
            x.extend(xr);
            n.extend(nr);
        }
        Ok((Matrix::new(n_samples, d, x)?, Matrix::new(n_samples, d, n)?))
    }
}

fn row_error(e: CoreError, row: usize) -> CoreError {
    match e {
        CoreError::Numeric { context, .. } => CoreError::Numeric {
            context: format!("sample row ({context})"),
            index: row,
        },
        other => other,
    }
}

pub(crate) fn iterate(h: &dyn StructuredFn, m: &[f64], start: &[f64]) -> Result<Vec<f64>> {
    let d = h.dim();
    if m.len() != d || start.len() != d {
        return Err(CoreError::arg(format!("expected vectors of length {d}")));
    }
    let mut y = start.to_vec();
    for it in 0..d {
        y = h.eval(&y, m)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric {
                context: "fixed-point iteration".into(),
                index: it,
            });
        }
    }
    Ok(y)
}

/// `x = Pᵀ H(·, P n)^{∘d}(0)`.
pub fn solve_fixed_point(scm: &FixedPointScm, n: &[f64]) -> Result<Vec<f64>> {
    let d = scm.d();
    if n.len() != d {
        return Err(CoreError::arg(format!(
            "noise has length {}, expected {d}",
            n.len()
        )));
    }
    let y = scm.iterate_ordered(&scm.perm.apply(n), &vec![0.0; d])?;
    Ok(scm.perm.apply_transpose(&y))
}

/// Samples `n_samples` rows; the noise is kept alongside the observations.
pub fn sample_observational(scm: &FixedPointScm, n_samples: usize, seed: u64) -> Result<Dataset> {
    let (x, n) = scm.sample(n_samples, seed)?;
    let mut ds = Dataset::from_matrix(x)?;
    ds.noise = Some(n);
    ds.provenance.seed = seed;
    Ok(ds)
}

/// `(x, n)` pairs in original coordinates drawn from the SCM itself.
pub fn default_probes(
    scm: &FixedPointScm,
    count: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let (x, n) = scm.sample(count, seed)?;
    Ok((0..count)
        .map(|i| (x.row(i).to_vec(), n.row(i).to_vec()))
        .collect())
}

/// Edge `j → i` whenever some probe has `|∂H_i/∂x_j| > tol` (original labels).
pub fn causal_graph_of(
    scm: &FixedPointScm,
    probes: &[(Vec<f64>, Vec<f64>)],
    tol: f64,
) -> Result<Dag> {
    if probes.is_empty() {
        return Err(CoreError::arg("causal_graph_of needs at least one probe"));
    }
    let d = scm.d();
    let mut max_abs = vec![vec![0.0f64; d]; d];
    for (x, n) in probes {
        let j = jacobians(scm.h.as_ref(), &scm.perm.apply(x), &scm.perm.apply(n))?;
        for (i, row) in max_abs.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate().take(i) {
                *v = v.max(j.jac_x[(i, k)].abs());
            }
        }
    }
    let map = scm.perm.map();
    let mut edges = Vec::new();
    for i in 0..d {
        for k in 0..i {
            if max_abs[i][k] > tol {
                edges.push((map[k], map[i]));
            }
        }
    }
    Dag::from_edges(d, &edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{FnStructured, LinearAnm};

    fn chain2() -> FixedPointScm {
        let h = LinearAnm::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        FixedPointScm::new(
            Permutation::identity(2),
            Arc::new(h),
            NoiseModel::standard_gaussian(2),
        )
        .unwrap()
    }

    #[test]
    fn closed_form_solutions() {
        let roots = FixedPointScm::new(
            Permutation::identity(2),
            Arc::new(FnStructured::new(2, |_, n| n.to_vec())),
            NoiseModel::standard_gaussian(2),
        )
        .unwrap();
        assert_eq!(
            solve_fixed_point(&roots, &[3.0, -1.0]).unwrap(),
            vec![3.0, -1.0]
        );
        assert_eq!(
            solve_fixed_point(&chain2(), &[1.0, 1.0]).unwrap(),
            vec![1.0, 2.0]
        );
        let chain3 =
            LinearAnm::from_rows(&[vec![0.0; 3], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]])
                .unwrap();
        let scm = FixedPointScm::new(
            Permutation::identity(3),
            Arc::new(chain3),
            NoiseModel::standard_gaussian(3),
        )
        .unwrap();
        assert_eq!(
            solve_fixed_point(&scm, &[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            solve_fixed_point(&chain2(), &[1.0]),
            Err(CoreError::Argument(_))
        ));
        let nan = FixedPointScm::new(
            Permutation::identity(2),
            Arc::new(FnStructured::new(2, |x, n| {
                vec![n[0], if x[0] > 1e300 { f64::NAN } else { x[0] + n[1] }]
            })),
            NoiseModel::standard_gaussian(2),
        )
        .unwrap();
        let err = solve_fixed_point(&nan, &[f64::MAX, 0.0]).unwrap_err();
        assert!(
            matches!(err, CoreError::Numeric { index: 1, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn graph_of_linear_chain() {
        let scm = chain2();
        let probes = default_probes(&scm, 4, 1).unwrap();
        assert_eq!(
            causal_graph_of(&scm, &probes, 1e-3).unwrap(),
            Dag::from_edges(2, &[(0, 1)]).unwrap()
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let scm = chain2();
        let a = sample_observational(&scm, 50, 7).unwrap();
        let b = sample_observational(&scm, 50, 7).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.noise, b.noise);
        for i in 0..50 {
            assert!(
                scm.residual(a.x.row(i), a.noise.as_ref().unwrap().row(i))
                    .unwrap()
                    <= 1e-12
            );
        }
    }
}

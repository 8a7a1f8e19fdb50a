use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Matrix;
use crate::error::{CoreError, Result};

/// `(Jac_x, Jac_n)` of `H` at one point; entry `(i, j)` is `∂H_i / ∂·_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobians {
    pub jac_x: DMatrix<f64>,
    pub jac_n: DMatrix<f64>,
    pub analytic: bool,
}

/// A map `H(x, n)` on ordered coordinates.
pub trait StructuredFn: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>>;

    /// Row-wise evaluation; implementors with batched kernels override this.
    fn eval_batch(&self, x: &Matrix, n: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let r = self.eval(x.row(i), n.row(i))?;
            out.row_mut(i).copy_from_slice(&r);
        }
        Ok(out)
    }

    fn analytic_jacobians(&self, _x: &[f64], _n: &[f64]) -> Result<Option<Jacobians>> {
        Ok(None)
    }

    /// Noise `m` with `y = H(y, m)`, for maps that can be inverted
    /// coordinate by coordinate.
    fn abduct_noise(&self, _y: &[f64]) -> Result<Vec<f64>> {
        Err(CoreError::Capability(format!(
            "{self:?} does not support noise abduction"
        )))
    }
}

/// Central differences with step `1e-5 * (1 + |v|)`.
pub fn finite_difference_jacobians(
    h: &dyn StructuredFn,
    x: &[f64],
    n: &[f64],
) -> Result<Jacobians> {
    let d = h.dim();
    let mut jac_x = DMatrix::zeros(d, d);
    let mut jac_n = DMatrix::zeros(d, d);
    for j in 0..d {
        let cx = fd_column(h, x, n, j, true)?;
        let cn = fd_column(h, x, n, j, false)?;
        for i in 0..d {
            jac_x[(i, j)] = cx[i];
            jac_n[(i, j)] = cn[i];
        }
    }
    Ok(Jacobians {
        jac_x,
        jac_n,
        analytic: false,
    })
}

fn fd_column(
    h: &dyn StructuredFn,
    x: &[f64],
    n: &[f64],
    j: usize,
    wrt_x: bool,
) -> Result<Vec<f64>> {
    let v = if wrt_x { x[j] } else { n[j] };
    let step = 1e-5 * (1.0 + v.abs());
    let shifted = |delta: f64| {
        let (mut xs, mut ns) = (x.to_vec(), n.to_vec());
        if wrt_x {
            xs[j] += delta;
        } else {
            ns[j] += delta;
        }
        h.eval(&xs, &ns)
    };
    let up = shifted(step)?;
    let down = shifted(-step)?;
    Ok(up
        .iter()
        .zip(&down)
        .map(|(u, d)| (u - d) / (2.0 * step))
        .collect())
}

/// Analytic Jacobians when the map provides them, finite differences otherwise.
pub fn jacobians(h: &dyn StructuredFn, x: &[f64], n: &[f64]) -> Result<Jacobians> {
    match h.analytic_jacobians(x, n)? {
        Some(j) => Ok(j),
        None => finite_difference_jacobians(h, x, n),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskTolerance {
    pub analytic: f64,
    pub finite_difference: f64,
}

impl Default for MaskTolerance {
    fn default() -> Self {
        Self {
            analytic: 1e-6,
            finite_difference: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskLevel {
    /// `Jac_x` strictly lower triangular and `Jac_n` diagonal.
    Full,
    /// Only `Jac_x` strictly lower triangular.
    StrictJacX,
}

/// Largest forbidden entry of one Jacobian pair, as `(value, matrix, i, j)`.
pub fn worst_forbidden_entry(j: &Jacobians, level: MaskLevel) -> (f64, &'static str, usize, usize) {
    let d = j.jac_x.nrows();
    let mut worst = (0.0, "jac_x", 0, 0);
    for i in 0..d {
        for k in 0..d {
            if k >= i && j.jac_x[(i, k)].abs() > worst.0 {
                worst = (j.jac_x[(i, k)].abs(), "jac_x", i, k);
            }
            if level == MaskLevel::Full && k != i && j.jac_n[(i, k)].abs() > worst.0 {
                worst = (j.jac_n[(i, k)].abs(), "jac_n", i, k);
            }
        }
    }
    worst
}

/// Verifies the triangular/diagonal Jacobian mask at every probe.
pub fn check_mask(
    h: &dyn StructuredFn,
    probes: &[(Vec<f64>, Vec<f64>)],
    level: MaskLevel,
    tol: MaskTolerance,
) -> Result<()> {
    for (p, (x, n)) in probes.iter().enumerate() {
        let j = jacobians(h, x, n)?;
        let limit = if j.analytic {
            tol.analytic
        } else {
            tol.finite_difference
        };
        let (v, which, i, k) = worst_forbidden_entry(&j, level);
        if v > limit {
            return Err(CoreError::Structure(format!(
                "{which}[{i},{k}] = {v:.3e} exceeds {limit:.0e} at probe {p}"
            )));
        }
    }
    Ok(())
}

/// Standard-normal `(x, n)` pairs.
pub fn gaussian_probes(d: usize, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            (x, n)
        })
        .collect()
}

type MapFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Wraps a closure as a [`StructuredFn`].
#[derive(Clone)]
pub struct FnStructured {
    d: usize,
    f: Arc<MapFn>,
}

impl FnStructured {
    pub fn new(d: usize, f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { d, f: Arc::new(f) }
    }
}

impl fmt::Debug for FnStructured {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnStructured(d={})", self.d)
    }
}

impl StructuredFn for FnStructured {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(x, n))
    }
}

/// `H(x, n) = A x + n` with `A` strictly lower triangular.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearAnm {
    a: DMatrix<f64>,
}

impl LinearAnm {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(CoreError::arg(format!(
                "coefficient matrix is {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        Ok(Self { a })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        Self::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn mean(&self, x: &[f64]) -> Vec<f64> {
        (0..self.a.nrows())
            .map(|i| (0..self.a.ncols()).map(|j| self.a[(i, j)] * x[j]).sum())
            .collect()
    }
}

impl StructuredFn for LinearAnm {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
        Ok(self.mean(x).iter().zip(n).map(|(m, n)| m + n).collect())
    }

    fn analytic_jacobians(&self, _x: &[f64], _n: &[f64]) -> Result<Option<Jacobians>> {
        let d = self.dim();
        Ok(Some(Jacobians {
            jac_x: self.a.clone(),
            jac_n: DMatrix::identity(d, d),
            analytic: true,
        }))
    }

    fn abduct_noise(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(y.iter().zip(self.mean(y)).map(|(y, m)| y - m).collect())
    }
}

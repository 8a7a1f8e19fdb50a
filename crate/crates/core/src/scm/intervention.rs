use std::fmt;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::scm::fixed_point::iterate;
use crate::scm::structured::{gaussian_probes, Jacobians, MaskLevel, StructuredFn};
use crate::scm::FixedPointScm;

/// Lower-triangular map `T` applied after `H` in ordered space.
pub trait TriangularMap: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn apply(&self, y: &[f64]) -> Vec<f64>;
}

type VecFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Closure-backed [`TriangularMap`].
#[derive(Clone)]
pub struct FnTriangular {
    d: usize,
    f: Arc<VecFn>,
}

impl FnTriangular {
    pub fn new(d: usize, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { d, f: Arc::new(f) }
    }

    pub fn identity(d: usize) -> Self {
        Self::new(d, <[f64]>::to_vec)
    }
}

impl fmt::Debug for FnTriangular {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnTriangular(d={})", self.d)
    }
}

impl TriangularMap for FnTriangular {
    fn dim(&self) -> usize {
        self.d
    }

    fn apply(&self, y: &[f64]) -> Vec<f64> {
        (self.f)(y)
    }
}

#[derive(Clone, Debug)]
pub enum InterventionMap {
    /// Sets ordered coordinate `index` to `value`.
    DoNode {
        index: usize,
        value: f64,
    },
    LowerTriangular(Arc<dyn TriangularMap>),
}

impl InterventionMap {
    pub fn identity(d: usize) -> Self {
        Self::LowerTriangular(Arc::new(FnTriangular::identity(d)))
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Self::DoNode { index, value } => {
                let mut out = y.to_vec();
                out[*index] = *value;
                out
            }
            Self::LowerTriangular(t) => t.apply(y),
        }
    }

    /// Range check for `DoNode`; Jacobian probe for general maps.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::DoNode { index, value } => {
                if *index >= d {
                    return Err(CoreError::arg(format!(
                        "intervention index {index} out of range for d={d}"
                    )));
                }
                if !value.is_finite() {
                    return Err(CoreError::arg("intervention value must be finite"));
                }
                Ok(())
            }
            Self::LowerTriangular(t) => {
                if t.dim() != d {
                    return Err(CoreError::arg(format!(
                        "intervention map has dim {}, expected {d}",
                        t.dim()
                    )));
                }
                for (p, (y, _)) in gaussian_probes(d, 5, 0x7a11).iter().enumerate() {
                    for j in 0..d {
                        let step = 1e-5 * (1.0 + y[j].abs());
                        let (mut up, mut down) = (y.clone(), y.clone());
                        up[j] += step;
                        down[j] -= step;
                        let (fu, fd) = (t.apply(&up), t.apply(&down));
                        for i in 0..j {
                            let g = (fu[i] - fd[i]) / (2.0 * step);
                            if g.abs() > 1e-4 {
                                return Err(CoreError::Structure(format!(
                                    "intervention Jacobian entry [{i},{j}] = {g:.3e} at probe {p} is above the diagonal"
                                )));
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }
}

/// `H_T = T ∘ H`.
#[derive(Clone, Debug)]
struct IntervenedFn {
    base: Arc<dyn StructuredFn>,
    t: InterventionMap,
}

impl StructuredFn for IntervenedFn {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, x: &[f64], n: &[f64]) -> Result<Vec<f64>> {
        Ok(self.t.apply(&self.base.eval(x, n)?))
    }

    fn analytic_jacobians(&self, x: &[f64], n: &[f64]) -> Result<Option<Jacobians>> {
        let InterventionMap::DoNode { index, .. } = self.t else {
            return Ok(None);
        };
        Ok(self.base.analytic_jacobians(x, n)?.map(|mut j| {
            j.jac_x.row_mut(index).fill(0.0);
            j.jac_n.row_mut(index).fill(0.0);
            j
        }))
    }
}

/// The SCM whose map is `T ∘ H`. Do-interventions keep the full mask;
/// general triangular maps may mix noise coordinates, so only the
/// strict triangularity in `x` is re-checked for them.
pub fn intervene(scm: &FixedPointScm, t: &InterventionMap) -> Result<FixedPointScm> {
    t.validate(scm.d())?;
    let level = match t {
        InterventionMap::DoNode { .. } => MaskLevel::Full,
        InterventionMap::LowerTriangular(_) => MaskLevel::StrictJacX,
    };
    let h = IntervenedFn {
        base: scm.h().clone(),
        t: t.clone(),
    };
    FixedPointScm::with_level(scm.perm().clone(), Arc::new(h), scm.noise().clone(), level)
}

/// Abducts the noise of `x_factual` and re-solves under `T ∘ H`.
pub fn counterfactual(
    scm: &FixedPointScm,
    t: &InterventionMap,
    x_factual: &[f64],
) -> Result<Vec<f64>> {
    let d = scm.d();
    if x_factual.len() != d {
        return Err(CoreError::arg(format!(
            "factual has length {}, expected {d}",
            x_factual.len()
        )));
    }
    t.validate(d)?;
    let m = scm.h().abduct_noise(&scm.perm().apply(x_factual))?;
    let h = IntervenedFn {
        base: scm.h().clone(),
        t: t.clone(),
    };
    let y = iterate(&h, &m, &vec![0.0; d])?;
    Ok(scm.perm().apply_transpose(&y))
}

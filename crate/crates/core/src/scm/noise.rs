use rand::Rng;
use rand_distr::{Distribution, Normal, Open01};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalCdf};

use crate::error::{CoreError, Result};

/// Empirical quantile function with linear interpolation between order
/// statistics at position `u * (n - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalQuantile {
    sorted: Vec<f64>,
}

impl EmpiricalQuantile {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(CoreError::arg(
                "empirical quantile needs at least one sample",
            ));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Numeric {
                context: "empirical quantile samples".into(),
                index: i,
            });
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.sorted.len();
        let pos = u.clamp(0.0, 1.0) * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = pos - lo as f64;
        self.sorted[lo] + frac * (self.sorted[hi] - self.sorted[lo])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseDist {
    Gaussian { mean: f64, std: f64 },
    Laplace { loc: f64, scale: f64 },
    Empirical(EmpiricalQuantile),
}

impl NoiseDist {
    pub fn standard_gaussian() -> Self {
        Self::Gaussian {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn standard_laplace() -> Self {
        Self::Laplace {
            loc: 0.0,
            scale: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { std, .. } if !(std > 0.0) => Err(CoreError::arg(format!(
                "gaussian std {std} must be positive"
            ))),
            Self::Laplace { scale, .. } if !(scale > 0.0) => Err(CoreError::arg(format!(
                "laplace scale {scale} must be positive"
            ))),
            _ => Ok(()),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Gaussian { mean, std } => NormalCdf::new(*mean, *std)
                .expect("validated")
                .inverse_cdf(u),
            Self::Laplace { loc, scale } => {
                let c = u - 0.5;
                loc - scale * c.signum() * (1.0 - 2.0 * c.abs()).ln()
            }
            Self::Empirical(q) => q.quantile(u),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian { mean, std } => {
                Normal::new(*mean, *std).expect("validated").sample(rng)
            }
            _ => {
                let u: f64 = Open01.sample(rng);
                self.quantile(u)
            }
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::Laplace { .. } => "laplace",
            Self::Empirical(_) => "empirical",
        }
    }
}

/// Independent per-node noise distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    dists: Vec<NoiseDist>,
}

impl NoiseModel {
    pub fn new(dists: Vec<NoiseDist>) -> Result<Self> {
        for d in &dists {
            d.validate()?;
        }
        Ok(Self { dists })
    }

    pub fn iid(d: usize, dist: NoiseDist) -> Result<Self> {
        Self::new(vec![dist; d])
    }

    pub fn standard_gaussian(d: usize) -> Self {
        Self::iid(d, NoiseDist::standard_gaussian()).expect("valid")
    }

    pub fn d(&self) -> usize {
        self.dists.len()
    }

    pub fn dists(&self) -> &[NoiseDist] {
        &self.dists
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.dists.iter().map(|d| d.sample(rng)).collect()
    }

    /// Pushes `u ∈ [0,1]^d` through the per-node quantile functions.
    pub fn quantiles(&self, u: &[f64]) -> Vec<f64> {
        self.dists
            .iter()
            .zip(u)
            .map(|(d, &u)| d.quantile(u))
            .collect()
    }
}

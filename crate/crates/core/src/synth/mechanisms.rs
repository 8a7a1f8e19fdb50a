use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scm::{Mechanism, NoiseDist};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismFamily {
    /// Weights with `|w| ∈ [weight_lo, weight_hi]`, negated with probability
    /// `sign_flip`.
    Linear {
        weight_lo: f64,
        weight_hi: f64,
        sign_flip: f64,
    },
    /// `Σ_k a_k cos(⟨ω_k, pa⟩ + b_k)` with `ω ~ N(0, 1/ℓ²)`, `b ~ U[0, 2π)`,
    /// `a_k = s √(2/K) z_k`.
    Rff {
        features: usize,
        length_scale: [f64; 2],
        output_scale: [f64; 2],
    },
}

impl MechanismFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Linear { .. } => "linear",
            Self::Rff { .. } => "rff",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Linear {
                weight_lo,
                weight_hi,
                sign_flip,
            } => {
                if !(weight_lo > 0.0 && weight_hi >= weight_lo) {
                    return Err(CoreError::Config(format!(
                        "weight range [{weight_lo}, {weight_hi}] must satisfy 0 < lo <= hi"
                    )));
                }
                if !(0.0..=1.0).contains(&sign_flip) {
                    return Err(CoreError::Config(format!(
                        "sign flip probability {sign_flip} out of range"
                    )));
                }
            }
            Self::Rff {
                features,
                length_scale,
                output_scale,
            } => {
                if features == 0 {
                    return Err(CoreError::Config("rff needs at least one feature".into()));
                }
                for (name, r) in [
                    ("length scale", length_scale),
                    ("output scale", output_scale),
                ] {
                    if !(r[0] > 0.0 && r[1] >= r[0]) {
                        return Err(CoreError::Config(format!(
                            "{name} range {r:?} must satisfy 0 < lo <= hi"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, num_parents: usize, rng: &mut R) -> MechanismFn {
        match *self {
            Self::Linear {
                weight_lo,
                weight_hi,
                sign_flip,
            } => MechanismFn::Linear {
                weights: (0..num_parents)
                    .map(|_| {
                        let w = rng.gen_range(weight_lo..=weight_hi);
                        if rng.gen::<f64>() < sign_flip {
                            -w
                        } else {
                            w
                        }
                    })
                    .collect(),
            },
            Self::Rff {
                features,
                length_scale,
                output_scale,
            } => {
                let ell = rng.gen_range(length_scale[0]..=length_scale[1]);
                let s = rng.gen_range(output_scale[0]..=output_scale[1]);
                let omega = Normal::new(0.0, 1.0 / ell).expect("positive length scale");
                let amp = s * (2.0 / features as f64).sqrt();
                MechanismFn::Rff {
                    omegas: (0..features)
                        .map(|_| (0..num_parents).map(|_| omega.sample(rng)).collect())
                        .collect(),
                    phases: (0..features)
                        .map(|_| rng.gen_range(0.0..2.0 * PI))
                        .collect(),
                    amplitudes: (0..features)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(rng);
                            amp * z
                        })
                        .collect(),
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian {
        std: f64,
    },
    /// Laplace noise multiplied by `clip(softplus(offset + ⟨v, pa⟩), min, max)`
    /// with `v ~ U[-weight_range, weight_range]`.
    LaplaceHeteroscedastic {
        scale: f64,
        offset: f64,
        weight_range: f64,
        min: f64,
        max: f64,
    },
}

impl NoiseFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Gaussian { .. } => "gaussian",
            Self::LaplaceHeteroscedastic { .. } => "laplace-heteroscedastic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gaussian { std } if !(std > 0.0) => Err(CoreError::Config(format!(
                "noise std {std} must be positive"
            ))),
            Self::LaplaceHeteroscedastic {
                scale, min, max, ..
            } if !(scale > 0.0 && min > 0.0 && max >= min) => Err(CoreError::Config(format!(
                "laplace scale {scale} and clip range [{min}, {max}] must be positive"
            ))),
            _ => Ok(()),
        }
    }

    pub fn dist(&self) -> NoiseDist {
        match *self {
            Self::Gaussian { std } => NoiseDist::Gaussian { mean: 0.0, std },
            Self::LaplaceHeteroscedastic { scale, .. } => NoiseDist::Laplace { loc: 0.0, scale },
        }
    }

    pub fn sample_scale<R: Rng + ?Sized>(&self, num_parents: usize, rng: &mut R) -> NoiseScale {
        match *self {
            Self::Gaussian { .. } => NoiseScale::Constant,
            Self::LaplaceHeteroscedastic {
                offset,
                weight_range,
                min,
                max,
                ..
            } => NoiseScale::Softplus {
                offset,
                weights: (0..num_parents)
                    .map(|_| {
                        if weight_range > 0.0 {
                            rng.gen_range(-weight_range..=weight_range)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
                min,
                max,
            },
        }
    }
}

/// Deterministic part of a mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismFn {
    Linear {
        weights: Vec<f64>,
    },
    Rff {
        omegas: Vec<Vec<f64>>,
        phases: Vec<f64>,
        amplitudes: Vec<f64>,
    },
}

impl MechanismFn {
    pub fn eval(&self, pa: &[f64]) -> f64 {
        match self {
            Self::Linear { weights } => weights.iter().zip(pa).map(|(w, p)| w * p).sum(),
            Self::Rff {
                omegas,
                phases,
                amplitudes,
            } => omegas
                .iter()
                .zip(phases)
                .zip(amplitudes)
                .map(|((w, b), a)| {
                    let z: f64 = w.iter().zip(pa).map(|(w, p)| w * p).sum();
                    a * (z + b).cos()
                })
                .sum(),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Self::Linear { weights } => weights.len(),
            Self::Rff { omegas, .. } => omegas.first().map_or(0, Vec::len),
        }
    }
}

/// Multiplier applied to the noise term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseScale {
    Constant,
    Softplus {
        offset: f64,
        weights: Vec<f64>,
        min: f64,
        max: f64,
    },
}

impl NoiseScale {
    pub fn eval(&self, pa: &[f64]) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Softplus {
                offset,
                weights,
                min,
                max,
            } => {
                let z = offset + weights.iter().zip(pa).map(|(w, p)| w * p).sum::<f64>();
                let sp = if z > 30.0 { z } else { z.exp().ln_1p() };
                sp.clamp(*min, *max)
            }
        }
    }
}

/// `F(pa, n) = f(pa) + b(pa) · n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthMechanism {
    pub f: MechanismFn,
    pub scale: NoiseScale,
}

impl Mechanism for SynthMechanism {
    fn eval(&self, parents: &[f64], noise: f64) -> f64 {
        self.f.eval(parents) + self.scale.eval(parents) * noise
    }

    fn noise_inverse(&self, parents: &[f64], value: f64) -> Option<f64> {
        Some((value - self.f.eval(parents)) / self.scale.eval(parents))
    }

    fn arity(&self) -> Option<usize> {
        Some(self.f.arity())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn linear_weights_respect_range() {
        let fam = MechanismFamily::Linear {
            weight_lo: 0.5,
            weight_hi: 2.0,
            sign_flip: 0.5,
        };
        let mut rng = rng_for(0, &[]);
        let MechanismFn::Linear { weights } = fam.sample(500, &mut rng) else {
            panic!("linear family");
        };
        assert!(weights.iter().all(|w| (0.5..=2.0).contains(&w.abs())));
        assert!(weights.iter().any(|&w| w < 0.0) && weights.iter().any(|&w| w > 0.0));
    }

    #[test]
    fn mechanism_inverts_noise() {
        let mut rng = rng_for(1, &[]);
        let fam = MechanismFamily::Rff {
            features: 16,
            length_scale: [1.0, 2.0],
            output_scale: [1.0, 2.0],
        };
        let noise = NoiseFamily::LaplaceHeteroscedastic {
            scale: 1.0,
            offset: 0.5,
            weight_range: 1.0,
            min: 0.2,
            max: 3.0,
        };
        let m = SynthMechanism {
            f: fam.sample(2, &mut rng),
            scale: noise.sample_scale(2, &mut rng),
        };
        let pa = [0.3, -1.2];
        let v = m.eval(&pa, 0.7);
        assert!((m.noise_inverse(&pa, v).unwrap() - 0.7).abs() < 1e-12);
        let b = m.scale.eval(&[100.0, 100.0]);
        assert!((0.2..=3.0).contains(&b));
    }
}

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundTruth, Matrix, Provenance};
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, rng_for};
use crate::scm::{Dag, Mechanism, NoiseModel, Permutation, StandardScm};
use crate::synth::{NoiseScale, Preset, ScmDistributionSpec, SynthMechanism};

const GRAPH_STREAM: u64 = 1;
const MECHANISM_STREAM: u64 = 2;
const DATA_STREAM: u64 = 3;
const MAX_GRAPH_ATTEMPTS: u64 = 100;

/// Realized mechanisms and noise of a generated SCM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScmDescription {
    pub mechanisms: Vec<SynthMechanism>,
    pub noise: NoiseModel,
}

impl ScmDescription {
    pub fn to_standard(&self, dag: &Dag) -> Result<StandardScm> {
        let mechs = self
            .mechanisms
            .iter()
            .map(|m| Arc::new(m.clone()) as Arc<dyn Mechanism>)
            .collect();
        StandardScm::new(dag.clone(), mechs, self.noise.clone())
    }
}

#[derive(Clone, Debug)]
pub struct SampledScm {
    pub scm: StandardScm,
    pub dag: Dag,
    pub order: Permutation,
    pub description: ScmDescription,
}

pub fn sample_scm(spec: &ScmDistributionSpec, seed: u64) -> Result<SampledScm> {
    spec.validate()?;
    let d = spec.d;
    let mut drawn = None;
    for attempt in 0..MAX_GRAPH_ATTEMPTS {
        let (dag, order) = spec
            .graph
            .sample(d, &mut rng_for(seed, &[GRAPH_STREAM, attempt]))?;
        if dag.num_edges() >= spec.min_edges {
            drawn = Some((dag, order));
            break;
        }
    }
    let (dag, order) = drawn.ok_or_else(|| {
        CoreError::Config(format!(
            "no {} graph with at least {} edges in {MAX_GRAPH_ATTEMPTS} draws",
            spec.graph.tag(),
            spec.min_edges
        ))
    })?;
    let mut rng = rng_for(seed, &[MECHANISM_STREAM]);
    let mechanisms = (0..d)
        .map(|i| {
            let k = dag.parents(i).len();
            SynthMechanism {
                f: spec.mechanism.sample(k, &mut rng),
                scale: spec.noise.sample_scale(k, &mut rng),
            }
        })
        .collect();
    let description = ScmDescription {
        mechanisms,
        noise: NoiseModel::iid(d, spec.noise.dist())?,
    };
    Ok(SampledScm {
        scm: description.to_standard(&dag)?,
        dag,
        order,
        description,
    })
}

pub fn generate_dataset(
    spec: &ScmDistributionSpec,
    n_samples: usize,
    seed: u64,
    standardize: bool,
) -> Result<Dataset> {
    if n_samples == 0 || (standardize && n_samples < 2) {
        return Err(CoreError::arg(format!(
            "cannot generate {n_samples} samples"
        )));
    }
    let s = sample_scm(spec, seed)?;
    let (x, noise) = s.scm.sample(n_samples, derive_seed(seed, &[DATA_STREAM]))?;
    let ds = Dataset {
        x,
        noise: Some(noise),
        truth: Some(GroundTruth {
            dag: s.dag,
            order: s.order,
            scm: Some(s.description),
        }),
        standardization: None,
        provenance: Provenance {
            id: format!("{}-d{}-{}", spec.mechanism.tag(), spec.d, spec.graph.tag()),
            seed,
            preset: None,
            graph: Some(spec.graph.tag().into()),
            mechanism: Some(spec.mechanism.tag().into()),
            noise: Some(spec.noise.tag().into()),
        },
    };
    ds.validate()?;
    if standardize {
        ds.standardized()
    } else {
        Ok(ds)
    }
}

/// `count` datasets per (dimension, graph family) of `preset`, in that
/// nesting order.
pub fn make_metadataset(
    preset: &Preset,
    dims: &[usize],
    count: usize,
    n_samples: usize,
    seed: u64,
    standardize: bool,
) -> Result<Vec<Dataset>> {
    if dims.is_empty() {
        return Err(CoreError::arg("dims must be non-empty"));
    }
    let mut jobs = Vec::new();
    for &d in dims {
        for g in 0..preset.graphs.len() {
            for c in 0..count {
                jobs.push((d, g, c));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(d, g, c)| {
            let spec = preset.spec(d, g);
            let job_seed = derive_seed(seed, &[d as u64, g as u64, c as u64]);
            let mut ds = generate_dataset(&spec, n_samples, job_seed, standardize)?;
            ds.provenance.id = format!(
                "{}-d{d}-{}-{c:03}",
                preset.name.to_ascii_lowercase(),
                spec.graph.tag()
            );
            ds.provenance.preset = Some(preset.name.clone());
            Ok(ds)
        })
        .collect()
}

/// Spread of the per-bin residual standard deviation of `node`, binning
/// rows by the argument of its noise-scale function. `None` for nodes
/// whose noise scale is constant.
pub fn heteroscedasticity(ds: &Dataset, node: usize, bins: usize) -> Result<Option<f64>> {
    let truth = ds.truth()?;
    let desc = truth
        .scm
        .as_ref()
        .ok_or_else(|| CoreError::Data("dataset has no mechanism description".into()))?;
    let mech = &desc.mechanisms[node];
    let NoiseScale::Softplus {
        offset, weights, ..
    } = &mech.scale
    else {
        return Ok(None);
    };
    if weights.is_empty() {
        return Ok(None);
    }
    let x = ds.raw_x();
    let parents = truth.dag.parents(node);
    let mut rows: Vec<(f64, f64)> = (0..x.rows())
        .map(|r| {
            let pa: Vec<f64> = parents.iter().map(|&p| x.get(r, p)).collect();
            let z = offset + weights.iter().zip(&pa).map(|(w, p)| w * p).sum::<f64>();
            (z, x.get(r, node) - mech.f.eval(&pa))
        })
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per_bin = rows.len() / bins.max(1);
    if per_bin < 2 {
        return Err(CoreError::arg("too few rows for the requested bins"));
    }
    let stds: Vec<f64> = rows
        .chunks(per_bin)
        .filter(|c| c.len() >= 2)
        .map(|c| {
            let r: Vec<f64> = c.iter().map(|v| v.1).collect();
            std_of(&r)
        })
        .collect();
    Ok(Some(std_of(&stds)))
}

fn std_of(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Rebuilds the generating SCM of a synthetic dataset.
pub fn standard_scm_of(ds: &Dataset) -> Result<StandardScm> {
    let truth = ds.truth()?;
    truth
        .scm
        .as_ref()
        .ok_or_else(|| {
            CoreError::Data(format!(
                "dataset '{}' has no mechanism description (simulator access)",
                ds.provenance.id
            ))
        })?
        .to_standard(&truth.dag)
}

/// Largest absolute correlation between two distinct columns.
pub fn max_abs_correlation(x: &Matrix) -> f64 {
    let c = x.covariance();
    let mut worst = 0.0f64;
    for i in 0..x.cols() {
        for j in 0..i {
            worst = worst.max((c[i][j] / (c[i][i] * c[j][j]).sqrt()).abs());
        }
    }
    worst
}

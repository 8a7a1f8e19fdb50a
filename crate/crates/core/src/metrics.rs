//! Ordering, graph and counterfactual scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, rng_for};
use crate::scm::{counterfactual, Dag, FixedPointScm, InterventionMap, Permutation};
use rand::Rng;

/// Topological ordering score of a parents-first ordering.
///
/// With `Q` the leaves-first reversal of `p_hat`, `G_Q = Q Gᵀ Qᵀ` has a
/// one at `(i, j)`, `j < i`, exactly when the node at position `i` has a
/// parent placed after it in `p_hat`. Returns `1 - #violating / (d - 1)`,
/// and `1.0` for a single node.
pub fn tos(p_hat: &Permutation, g: &Dag) -> Result<f64> {
    let d = g.d();
    if p_hat.len() != d {
        return Err(CoreError::arg(format!("ordering of length {} for {d} nodes", p_hat.len())));
    }
    if d <= 1 {
        return Ok(1.0);
    }
    let q = p_hat.reversed().matrix();
    let gt: Vec<Vec<f64>> = (0..d)
        .map(|a| (0..d).map(|b| if g.has_edge(b, a) { 1.0 } else { 0.0 }).collect())
        .collect();
    let gq = matmul(&matmul(&q, &gt), &transpose(&q));
    let violating = (0..d)
        .filter(|&i| (0..i).map(|j| gq[i][j]).sum::<f64>() >= 1.0)
        .count();
    Ok(1.0 - violating as f64 / (d - 1) as f64)
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum()).collect())
        .collect()
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = a.first().map_or(0, Vec::len);
    (0..m).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// F1 over directed edges; `1.0` when both graphs are empty, `0.0` when
/// there are no true positives otherwise.
pub fn f1_directed(g_hat: &Dag, g_true: &Dag) -> Result<f64> {
    if g_hat.d() != g_true.d() {
        return Err(CoreError::arg(format!("graphs have {} and {} nodes", g_hat.d(), g_true.d())));
    }
    let (pred, truth) = (g_hat.num_edges(), g_true.num_edges());
    if pred == 0 && truth == 0 {
        return Ok(1.0);
    }
    let tp = g_hat.edges().iter().filter(|&&(i, j)| g_true.has_edge(i, j)).count();
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / pred as f64;
    let recall = tp as f64 / truth as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// `sqrt(mean_i ((x_i - x̂_i) / σ_i)²)`.
pub fn rescaled_l2(x: &[f64], x_hat: &[f64], sigmas: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() || x.len() != sigmas.len() || x.is_empty() {
        return Err(CoreError::arg("rescaled_l2 needs three non-empty vectors of equal length"));
    }
    if let Some(i) = sigmas.iter().position(|&s| !(s > 0.0)) {
        return Err(CoreError::arg(format!("sigma[{i}] = {} must be positive", sigmas[i])));
    }
    let s: f64 = x
        .iter()
        .zip(x_hat)
        .zip(sigmas)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum();
    Ok((s / x.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub value: f64,
}

/// Per-item scores with median, mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: String,
    pub rows: Vec<ScoreRow>,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

impl ScoreReport {
    pub fn new(metric: impl Into<String>, rows: Vec<ScoreRow>) -> Self {
        let (median, mean, std) = aggregates(&rows.iter().map(|r| r.value).collect::<Vec<_>>());
        Self {
            metric: metric.into(),
            rows,
            median,
            mean,
            std,
        }
    }

    /// `median/mean (std)`.
    pub fn summary(&self) -> String {
        format!("{:.3}/{:.3} ({:.3})", self.median, self.mean, self.std)
    }

    pub fn aggregates_consistent(&self) -> bool {
        let (m, a, s) = aggregates(&self.rows.iter().map(|r| r.value).collect::<Vec<_>>());
        let same = |x: f64, y: f64| x == y || (x.is_nan() && y.is_nan());
        same(m, self.median) && same(a, self.mean) && same(s, self.std)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("id,{}\n", self.metric);
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.id, r.value));
        }
        out
    }
}

fn aggregates(v: &[f64]) -> (f64, f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    (median, mean, std)
}

/// Two-sample Kolmogorov-Smirnov distance between empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(CoreError::arg("KS distance needs two non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst = 0.0f64;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(worst)
}

/// Predicts counterfactuals under `do(X_node = value)` in original labels
/// and units.
pub trait CounterfactualPredictor: Sync {
    fn predict_do(&self, x_factual: &[f64], node: usize, value: f64) -> Result<Vec<f64>>;

    fn predict_do_batch(&self, x_factual: &Matrix, node: usize, value: f64) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = (0..x_factual.rows())
            .map(|i| self.predict_do(x_factual.row(i), node, value))
            .collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    }
}

/// Exact counterfactuals of a known SCM.
pub struct GroundTruthPredictor<'a>(pub &'a FixedPointScm);

impl CounterfactualPredictor for GroundTruthPredictor<'_> {
    fn predict_do(&self, x: &[f64], node: usize, value: f64) -> Result<Vec<f64>> {
        let t = InterventionMap::DoNode {
            index: self.0.perm().position(node),
            value,
        };
        counterfactual(self.0, &t, x)
    }
}

/// Returns the factual unchanged.
pub struct IdentityPredictor;

impl CounterfactualPredictor for IdentityPredictor {
    fn predict_do(&self, x: &[f64], _node: usize, _value: f64) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfEvalConfig {
    pub n_interventions: usize,
    pub per_intervention: usize,
    /// Samples drawn from the true SCM to set value ranges and scales.
    pub reference_samples: usize,
    pub seed: u64,
}

impl Default for CfEvalConfig {
    fn default() -> Self {
        Self {
            n_interventions: 10,
            per_intervention: 100,
            reference_samples: 1000,
            seed: 0,
        }
    }
}

/// Per intervention: a uniformly drawn node is set to a value uniform on its
/// observed range; factuals are drawn from `scm_true` and the predictor's
/// counterfactuals are scored against the exact ones with [`rescaled_l2`],
/// averaged over factuals. `reference` overrides the sample used for
/// ranges and scales.
pub fn cf_eval(
    scm_true: &FixedPointScm,
    predictor: &dyn CounterfactualPredictor,
    cfg: &CfEvalConfig,
    reference: Option<&Matrix>,
) -> Result<ScoreReport> {
    let d = scm_true.d();
    let sampled;
    let reference = match reference {
        Some(r) => r,
        None => {
            sampled = scm_true.sample(cfg.reference_samples.max(2), derive_seed(cfg.seed, &[0]))?.0;
            &sampled
        }
    };
    if reference.cols() != d {
        return Err(CoreError::arg("reference sample dimension differs from the SCM"));
    }
    let sigmas = reference.column_stds();
    let lo: Vec<f64> = (0..d).map(|j| reference.column(j).into_iter().fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|j| reference.column(j).into_iter().fold(f64::NEG_INFINITY, f64::max)).collect();
    let truth = GroundTruthPredictor(scm_true);
    let rows = (0..cfg.n_interventions)
        .into_par_iter()
        .map(|iv| {
            let mut rng = rng_for(cfg.seed, &[1, iv as u64]);
            let node = rng.gen_range(0..d);
            let value = if hi[node] > lo[node] { rng.gen_range(lo[node]..=hi[node]) } else { lo[node] };
            let (factual, _) = scm_true.sample(cfg.per_intervention, derive_seed(cfg.seed, &[2, iv as u64]))?;
            let exact = truth.predict_do_batch(&factual, node, value)?;
            let pred = predictor.predict_do_batch(&factual, node, value)?;
            let mut total = 0.0;
            for i in 0..factual.rows() {
                total += rescaled_l2(exact.row(i), pred.row(i), &sigmas)?;
            }
            Ok(ScoreRow {
                id: format!("iv{iv:03}-node{node}"),
                value: total / factual.rows() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoreReport::new("rescaled_l2", rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tos_examples() {
        let chain = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(tos(&Permutation::identity(3), &chain).unwrap(), 1.0);
        let two = Dag::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(tos(&Permutation::new(vec![1, 0]).unwrap(), &two).unwrap(), 0.0);
        assert_eq!(tos(&Permutation::new(vec![2, 0, 1]).unwrap(), &Dag::empty(3)).unwrap(), 1.0);
        assert_eq!(tos(&Permutation::identity(1), &Dag::empty(1)).unwrap(), 1.0);
    }

    #[test]
    fn f1_examples() {
        let a = Dag::from_edges(3, &[(0, 1)]).unwrap();
        let b = Dag::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(f1_directed(&b, &b).unwrap(), 1.0);
        assert_eq!(f1_directed(&Dag::empty(3), &b).unwrap(), 0.0);
        assert!((f1_directed(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1_directed(&Dag::empty(3), &Dag::empty(3)).unwrap(), 1.0);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
        assert!((ks_statistic(&[0.0, 2.0], &[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(ks_statistic(&[], &[1.0]).is_err());
    }

    #[test]
    fn rescaled_l2_examples() {
        assert_eq!(rescaled_l2(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(rescaled_l2(&[2.0], &[0.0], &[2.0]).unwrap(), 1.0);
        assert_eq!(rescaled_l2(&[1.0; 4], &[0.0; 4], &[1.0; 4]).unwrap(), 1.0);
        assert!(rescaled_l2(&[1.0], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn report_aggregates() {
        let rows = [1.0, 3.0, 2.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| ScoreRow {
                id: i.to_string(),
                value: v,
            })
            .collect();
        let r = ScoreReport::new("x", rows);
        assert_eq!(r.median, 2.5);
        assert_eq!(r.mean, 4.0);
        assert!(r.aggregates_consistent());
        assert_eq!(r.to_csv().lines().count(), 5);
        let back: ScoreReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}

#![allow(dead_code)]

use std::collections::HashSet;

use fpscm::metrics::CounterfactualPredictor;
use fpscm::scm::{all_permutations, Dag, Permutation, StandardScm};
use fpscm::Result;

/// Every labelled DAG on `d` nodes, built from each ordering and each
/// subset of its forward pairs.
pub fn all_dags(d: usize) -> Vec<Dag> {
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|a| (a + 1..d).map(move |b| (a, b))).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in all_permutations(d) {
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, &(a, b))| (p.map()[a], p.map()[b]))
                .collect();
            let g = Dag::from_edges(d, &edges).unwrap();
            if seen.insert(g.to_nested()) {
                out.push(g);
            }
        }
    }
    out
}

/// Share of nodes, out of `d − 1`, with a parent placed after them.
pub fn brute_tos(p: &Permutation, g: &Dag) -> f64 {
    let d = g.d();
    if d == 1 {
        return 1.0;
    }
    let bad = (0..d)
        .filter(|&i| g.parents(i).iter().any(|&j| p.position(j) > p.position(i)))
        .count();
    1.0 - bad as f64 / (d - 1) as f64
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut worst) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        worst = worst.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    worst
}

/// Counterfactuals by inverting each mechanism in topological order and
/// re-evaluating ancestrally with the intervened node clamped.
pub struct AncestralPredictor<'a>(pub &'a StandardScm);

impl CounterfactualPredictor for AncestralPredictor<'_> {
    fn predict_do(&self, x: &[f64], node: usize, value: f64) -> Result<Vec<f64>> {
        let scm = self.0;
        let g = scm.dag();
        let order = g.topological_order();
        let mut noise = vec![0.0; x.len()];
        for &i in &order {
            let pa: Vec<f64> = g.parents(i).iter().map(|&p| x[p]).collect();
            noise[i] = scm.mechanisms()[i].noise_inverse(&pa, x[i]).expect("invertible mechanism");
        }
        let mut cf = vec![0.0; x.len()];
        for &i in &order {
            cf[i] = if i == node {
                value
            } else {
                let pa: Vec<f64> = g.parents(i).iter().map(|&p| cf[p]).collect();
                scm.mechanisms()[i].eval(&pa, noise[i])
            };
        }
        Ok(cf)
    }
}

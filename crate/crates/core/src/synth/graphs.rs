use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::scm::{Dag, Permutation};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErDensity {
    EdgeProb(f64),
    /// Expected edges per node `k`, i.e. `p = 2k / (d - 1)`.
    ExpectedEdgesPerNode(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphFamily {
    ErdosRenyi {
        density: ErDensity,
    },
    ScaleFree {
        m: usize,
    },
    WattsStrogatz {
        k: usize,
        rewire: f64,
    },
    StochasticBlock {
        blocks: usize,
        p_in: f64,
        p_out: f64,
    },
    /// Directed path through all nodes in a random order.
    Chain,
}

impl GraphFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::ErdosRenyi { .. } => "er",
            Self::ScaleFree { .. } => "sf",
            Self::WattsStrogatz { .. } => "ws",
            Self::StochasticBlock { .. } => "sbm",
            Self::Chain => "chain",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(CoreError::Config(format!(
                    "{name} = {p} is not a probability"
                )))
            }
        };
        match *self {
            Self::ErdosRenyi {
                density: ErDensity::EdgeProb(p),
            } => prob("edge probability", p),
            Self::ErdosRenyi {
                density: ErDensity::ExpectedEdgesPerNode(k),
            } if !(k >= 0.0) => Err(CoreError::Config(format!(
                "expected edges per node {k} must be non-negative"
            ))),
            Self::ScaleFree { m: 0 } => Err(CoreError::Config(
                "scale-free attachment m must be positive".into(),
            )),
            Self::WattsStrogatz { k, rewire } => {
                if k < 2 {
                    return Err(CoreError::Config(
                        "watts-strogatz k must be at least 2".into(),
                    ));
                }
                prob("rewire probability", rewire)
            }
            Self::StochasticBlock {
                blocks,
                p_in,
                p_out,
            } => {
                if blocks == 0 {
                    return Err(CoreError::Config(
                        "stochastic block model needs at least one block".into(),
                    ));
                }
                prob("intra-block probability", p_in)?;
                prob("inter-block probability", p_out)
            }
            _ => Ok(()),
        }
    }

    /// Whether the family can produce any edge at dimension `d`.
    pub fn can_produce_edges(&self, d: usize) -> bool {
        match *self {
            Self::ErdosRenyi { density } => d >= 2 && er_prob(density, d) > 0.0,
            Self::StochasticBlock { p_in, p_out, .. } => d >= 2 && (p_in > 0.0 || p_out > 0.0),
            _ => d >= 2,
        }
    }

    /// Draws a DAG and one topological ordering of it.
    pub fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<(Dag, Permutation)> {
        self.validate()?;
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(rng);
        if let Self::Chain = self {
            let edges: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
            return Ok((Dag::from_edges(d, &edges)?, Permutation::new(order)?));
        }
        let undirected = match *self {
            Self::ErdosRenyi { density } => erdos_renyi(d, er_prob(density, d), rng),
            Self::ScaleFree { m } => barabasi_albert(d, m, rng),
            Self::WattsStrogatz { k, rewire } => watts_strogatz(d, k, rewire, rng),
            Self::StochasticBlock {
                blocks,
                p_in,
                p_out,
            } => stochastic_block(d, blocks, p_in, p_out, rng),
            Self::Chain => unreachable!(),
        };
        // node `order[r]` gets rank r; edges point from lower to higher rank
        let perm = Permutation::new(order)?;
        let edges: Vec<(usize, usize)> = undirected
            .into_iter()
            .map(|(u, v)| {
                if perm.position(u) < perm.position(v) {
                    (u, v)
                } else {
                    (v, u)
                }
            })
            .collect();
        Ok((Dag::from_edges(d, &edges)?, perm))
    }
}

fn er_prob(density: ErDensity, d: usize) -> f64 {
    match density {
        ErDensity::EdgeProb(p) => p,
        ErDensity::ExpectedEdgesPerNode(k) if d > 1 => (2.0 * k / (d - 1) as f64).min(1.0),
        ErDensity::ExpectedEdgesPerNode(_) => 0.0,
    }
}

fn erdos_renyi<R: Rng + ?Sized>(d: usize, p: f64, rng: &mut R) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            if rng.gen::<f64>() < p {
                out.push((i, j));
            }
        }
    }
    out
}

/// Preferential attachment: node `t` links to `min(m, t)` distinct earlier
/// nodes drawn with probability proportional to degree + 1.
fn barabasi_albert<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut degree = vec![0usize; d];
    let mut out = Vec::new();
    for t in 1..d {
        let mut targets = BTreeSet::new();
        while targets.len() < m.min(t) {
            let total: usize = (0..t)
                .filter(|v| !targets.contains(v))
                .map(|v| degree[v] + 1)
                .sum();
            let mut r = rng.gen_range(0..total);
            for v in (0..t).filter(|v| !targets.contains(v)) {
                if r < degree[v] + 1 {
                    targets.insert(v);
                    break;
                }
                r -= degree[v] + 1;
            }
        }
        for v in targets {
            degree[v] += 1;
            degree[t] += 1;
            out.push((v, t));
        }
    }
    out
}

fn watts_strogatz<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    beta: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut edges = BTreeSet::new();
    for i in 0..d {
        for j in 1..=(k / 2) {
            let v = (i + j) % d;
            if v != i {
                edges.insert(key(i, v));
            }
        }
    }
    let ring: Vec<(usize, usize)> = edges.iter().copied().collect();
    for (u, v) in ring {
        if rng.gen::<f64>() >= beta {
            continue;
        }
        let free: Vec<usize> = (0..d)
            .filter(|&w| w != u && !edges.contains(&key(u, w)))
            .collect();
        if let Some(&w) = free.choose(rng) {
            edges.remove(&(u, v));
            edges.insert(key(u, w));
        }
    }
    edges.into_iter().collect()
}

fn stochastic_block<R: Rng + ?Sized>(
    d: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let block = |i: usize| i * blocks / d;
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let p = if block(i) == block(j) { p_in } else { p_out };
            if rng.gen::<f64>() < p {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn complete_and_empty_er() {
        let mut rng = rng_for(1, &[]);
        let full = GraphFamily::ErdosRenyi {
            density: ErDensity::EdgeProb(1.0),
        };
        let (g, p) = full.sample(3, &mut rng).unwrap();
        assert_eq!(g.num_edges(), 3);
        assert!(p.is_topological_order(&g));
        let none = GraphFamily::ErdosRenyi {
            density: ErDensity::EdgeProb(0.0),
        };
        assert_eq!(none.sample(3, &mut rng).unwrap().0.num_edges(), 0);
    }

    #[test]
    fn scale_free_tree() {
        let mut rng = rng_for(2, &[]);
        for _ in 0..10 {
            let (g, p) = GraphFamily::ScaleFree { m: 1 }
                .sample(20, &mut rng)
                .unwrap();
            assert_eq!(g.num_edges(), 19);
            assert!(p.is_topological_order(&g));
        }
    }

    #[test]
    fn families_yield_valid_orders() {
        let fams = [
            GraphFamily::WattsStrogatz { k: 2, rewire: 0.3 },
            GraphFamily::StochasticBlock {
                blocks: 2,
                p_in: 0.6,
                p_out: 0.1,
            },
            GraphFamily::Chain,
            GraphFamily::ScaleFree { m: 2 },
        ];
        let mut rng = rng_for(3, &[]);
        for f in &fams {
            for d in [2, 5, 9] {
                let (g, p) = f.sample(d, &mut rng).unwrap();
                assert!(p.is_topological_order(&g), "{f:?}");
            }
        }
        let (chain, _) = GraphFamily::Chain.sample(6, &mut rng).unwrap();
        assert_eq!(chain.num_edges(), 5);
        assert_eq!(chain.leaves().iter().filter(|&&l| l).count(), 1);
    }
}

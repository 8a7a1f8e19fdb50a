use std::collections::VecDeque;

use crate::error::{CoreError, Result};

/// Directed acyclic graph; `has_edge(i, j)` means `i` is a parent of `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dag {
    d: usize,
    adj: Vec<bool>,
}

impl Dag {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            adj: vec![false; d * d],
        }
    }

    pub fn from_adjacency(adj: &[Vec<bool>]) -> Result<Self> {
        let d = adj.len();
        let mut g = Self::empty(d);
        for (i, row) in adj.iter().enumerate() {
            if row.len() != d {
                return Err(CoreError::arg(format!(
                    "adjacency row {i} has length {}, expected {d}",
                    row.len()
                )));
            }
            for (j, &e) in row.iter().enumerate() {
                g.adj[i * d + j] = e;
            }
        }
        g.check()?;
        Ok(g)
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(d);
        for &(i, j) in edges {
            if i >= d || j >= d {
                return Err(CoreError::arg(format!(
                    "edge ({i},{j}) out of range for d={d}"
                )));
            }
            g.adj[i * d + j] = true;
        }
        g.check()?;
        Ok(g)
    }

    /// Nested 0/1 rows.
    pub fn from_nested(rows: &[Vec<u8>]) -> Result<Self> {
        let adj: Vec<Vec<bool>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| v != 0).collect())
            .collect();
        Self::from_adjacency(&adj)
    }

    pub fn to_nested(&self) -> Vec<Vec<u8>> {
        (0..self.d)
            .map(|i| (0..self.d).map(|j| u8::from(self.has_edge(i, j))).collect())
            .collect()
    }

    fn check(&self) -> Result<()> {
        if let Some(i) = (0..self.d).find(|&i| self.has_edge(i, i)) {
            return Err(CoreError::Structure(format!("self loop on node {i}")));
        }
        if self.topological_order().len() != self.d {
            return Err(CoreError::Structure(
                "graph contains a directed cycle".into(),
            ));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.d + j]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    /// Parents of `j` in increasing index order.
    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d).filter(|&i| self.has_edge(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.d).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// Nodes without outgoing edges.
    pub fn leaves(&self) -> Vec<bool> {
        (0..self.d)
            .map(|i| !(0..self.d).any(|j| self.has_edge(i, j)))
            .collect()
    }

    /// Kahn peeling, smallest available index first. Shorter than `d` iff
    /// the adjacency has a cycle.
    pub fn topological_order(&self) -> Vec<usize> {
        let mut indeg: Vec<usize> = (0..self.d).map(|j| self.parents(j).len()).collect();
        let mut ready: VecDeque<usize> = (0..self.d).filter(|&j| indeg[j] == 0).collect();
        let mut order = Vec::with_capacity(self.d);
        while let Some(i) = ready.pop_front() {
            order.push(i);
            for j in self.children(i) {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push_back(j);
                }
            }
        }
        order
    }

    /// Graph on the remaining `d - 1` nodes, relabeled in increasing order.
    pub fn remove_node(&self, q: usize) -> Dag {
        let keep: Vec<usize> = (0..self.d).filter(|&i| i != q).collect();
        self.induced(&keep)
    }

    /// Subgraph on `nodes`; node `k` of the result is `nodes[k]`.
    pub fn induced(&self, nodes: &[usize]) -> Dag {
        let m = nodes.len();
        let mut g = Dag::empty(m);
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                g.adj[a * m + b] = self.has_edge(i, j);
            }
        }
        g
    }

    /// Graph with node `k` renamed to `relabel[k]`.
    pub fn relabeled(&self, relabel: &[usize]) -> Result<Dag> {
        let edges: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(i, j)| (relabel[i], relabel[j]))
            .collect();
        Dag::from_edges(self.d, &edges)
    }

    /// Whether `a` is an ancestor of `b` (strict).
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        let mut seen = vec![false; self.d];
        let mut stack = self.children(a);
        while let Some(v) = stack.pop() {
            if v == b {
                return true;
            }
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.children(v));
            }
        }
        false
    }
}

use crate::error::{CoreError, Result};
use crate::scm::Dag;

/// Ordering of the nodes: ordered position `k` holds original node
/// `map[k]`, i.e. `(P x)_k = x[map[k]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
    inv: Vec<usize>,
}

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let d = map.len();
        let mut inv = vec![usize::MAX; d];
        for (k, &v) in map.iter().enumerate() {
            if v >= d || inv[v] != usize::MAX {
                return Err(CoreError::arg(format!(
                    "{map:?} is not a permutation of 0..{d}"
                )));
            }
            inv[v] = k;
        }
        Ok(Self { map, inv })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            map: (0..d).collect(),
            inv: (0..d).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    /// Ordered position of original node `node`.
    pub fn position(&self, node: usize) -> usize {
        self.inv[node]
    }

    pub fn inverse_map(&self) -> &[usize] {
        &self.inv
    }

    /// `P x`.
    pub fn apply<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.map.iter().map(|&j| x[j]).collect()
    }

    /// `Pᵀ y`.
    pub fn apply_transpose<T: Copy>(&self, y: &[T]) -> Vec<T> {
        self.inv.iter().map(|&k| y[k]).collect()
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let d = self.len();
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| if self.map[i] == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    pub fn reversed(&self) -> Permutation {
        let mut map = self.map.clone();
        map.reverse();
        Permutation::new(map).expect("reversal of a permutation")
    }

    /// First edge `(parent, child)` whose child is ordered before its parent.
    pub fn first_violation(&self, dag: &Dag) -> Option<(usize, usize)> {
        dag.edges()
            .into_iter()
            .find(|&(p, c)| self.position(p) > self.position(c))
    }

    pub fn is_topological_order(&self, dag: &Dag) -> bool {
        self.len() == dag.d() && self.first_violation(dag).is_none()
    }

    pub fn check_topological(&self, dag: &Dag) -> Result<()> {
        if self.len() != dag.d() {
            return Err(CoreError::arg(format!(
                "permutation of length {} for a graph with {} nodes",
                self.len(),
                dag.d()
            )));
        }
        match self.first_violation(dag) {
            Some((parent, child)) => Err(CoreError::Ordering { parent, child }),
            None => Ok(()),
        }
    }
}

/// All permutations of `0..d` in lexicographic order.
pub fn all_permutations(d: usize) -> Vec<Permutation> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Permutation>) {
        if cur.len() == used.len() {
            out.push(Permutation::new(cur.clone()).expect("bijection"));
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                cur.push(v);
                rec(cur, used, out);
                cur.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; d], &mut out);
    out
}
